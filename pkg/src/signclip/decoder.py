"""Toy attention decoder with LoRA adapters, translation loss and greedy decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .tensor import ConfigurationError, Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
NEG_INF = -1e9


class Vocabulary:
    """Token list with ids 0-3 reserved for ``<pad> <bos> <eos> <unk>``."""

    def __init__(self, words):
        words = list(words)
        if len(set(words)) != len(words):
            raise ValueError("vocabulary words must be distinct")
        clash = set(words) & set(RESERVED)
        if clash:
            raise ValueError(f"words collide with reserved tokens: {sorted(clash)}")
        self.tokens = list(RESERVED) + words
        self._ids = {w: i for i, w in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @property
    def words(self) -> list[str]:
        return self.tokens[len(RESERVED):]

    def token_to_id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def id_to_token(self, i: int) -> str:
        return self.tokens[i]

    def encode(self, words) -> list[int]:
        return [self.token_to_id(w) for w in words]

    def decode(self, ids) -> list[str]:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.tokens[i])
        return out


# ------------------------------------------------------------------- LoRA

@dataclass
class LoraAdapter:
    """Low-rank update ``s * B A`` for a frozen ``d_in -> d_out`` map.

    ``A`` is ``(r, d_in)``, ``B`` is ``(d_out, r)`` and starts at zero, so a
    fresh adapter leaves the base map unchanged.
    """

    A: Tensor
    B: Tensor
    scale: float = 1.0

    @classmethod
    def create(cls, d_in: int, d_out: int, rank: int, scale: float, rng: np.random.Generator) -> "LoraAdapter":
        if rank < 1 or rank >= min(d_in, d_out):
            raise ConfigurationError(f"LoRA rank {rank} must satisfy 1 <= r < min({d_in}, {d_out})")
        bound = 1.0 / math.sqrt(d_in)
        A = Tensor(rng.uniform(-bound, bound, size=(rank, d_in)), requires_grad=True)
        B = Tensor(np.zeros((d_out, rank)), requires_grad=True)
        return cls(A, B, scale)

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def d_in(self) -> int:
        return self.A.shape[1]

    @property
    def d_out(self) -> int:
        return self.B.shape[0]


def apply_lora(base_out: Tensor, x: Tensor, adapter: LoraAdapter | None) -> Tensor:
    """``base_out + s * (x A^T) B^T`` in row-vector form."""
    if adapter is None:
        return base_out
    if adapter.A.shape[0] != adapter.B.shape[1]:
        raise ConfigurationError(f"LoRA factors disagree on rank: A {adapter.A.shape}, B {adapter.B.shape}")
    if x.shape[-1] != adapter.d_in or base_out.shape[-1] != adapter.d_out:
        raise ConfigurationError(
            f"LoRA adapter ({adapter.d_in}->{adapter.d_out}) does not fit x {x.shape} / base {base_out.shape}")
    delta = tc.matmul(tc.matmul(x, tc.transpose(adapter.A)), tc.transpose(adapter.B))
    if adapter.scale != 1.0:
        delta = tc.scale(delta, adapter.scale)
    return tc.add(base_out, delta)


# -------------------------------------------------------------- attention

def attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention.

    ``q`` is ``(N, U, d)``, ``k``/``v`` are ``(N, S, d)``; ``mask`` is a boolean
    array broadcastable to ``(N, U, S)`` with True where attending is allowed.
    """
    N, U, d = q.shape
    S = k.shape[1]
    if d % n_heads:
        raise ConfigurationError(f"d_model {d} is not divisible by {n_heads} heads")
    dh = d // n_heads

    def heads(t, n):
        return tc.transpose(tc.reshape(t, (N, n, n_heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = heads(q, U), heads(k, S), heads(v, S)
    scores = tc.scale(tc.matmul(qh, tc.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if mask is not None:
        bias = np.where(np.broadcast_to(mask, (N, U, S)), 0.0, NEG_INF)[:, None, :, :]
        scores = tc.add(scores, bias)
    ctx = tc.matmul(tc.softmax(scores, axis=-1), vh)
    return tc.reshape(tc.transpose(ctx, (0, 2, 1, 3)), (N, U, d))


# ---------------------------------------------------------------- decoder

FROZEN_BASE = ("self_q", "self_v", "ffn_in", "ffn_out")


@dataclass
class DecoderParams:
    token_embedding: Tensor  # (V, d)
    prompt: Tensor  # (P, d)
    target_position: Tensor  # (max_len, d)
    frame_position: Tensor  # (max_frames, d)
    maps: dict[str, Tensor]  # square attention maps and FFN maps
    ffn_in_bias: Tensor
    ffn_out_bias: Tensor
    out_proj: Tensor  # (d, V)
    out_bias: Tensor  # (V,)
    n_heads: int = 2
    adapters: dict[str, LoraAdapter] = field(default_factory=dict)

    @classmethod
    def create(cls, vocab_size: int, d_model: int, rng: np.random.Generator, n_heads: int = 2,
               prompt_len: int = 4, max_len: int = 16, max_frames: int = 64) -> "DecoderParams":
        d = d_model

        def w(n_in, n_out, trainable=True):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out)), requires_grad=trainable)

        maps = {}
        for name in ("self_q", "self_k", "self_v", "self_o", "cross_q", "cross_k", "cross_v", "cross_o"):
            maps[name] = w(d, d, trainable=name not in FROZEN_BASE)
        maps["ffn_in"] = w(d, 4 * d, trainable=False)
        maps["ffn_out"] = w(4 * d, d, trainable=False)
        return cls(
            token_embedding=Tensor(rng.normal(0.0, 1.0, size=(vocab_size, d)) / math.sqrt(d) * 2, requires_grad=True),
            prompt=Tensor(rng.normal(0.0, 0.5, size=(prompt_len, d)), requires_grad=True),
            target_position=Tensor(rng.normal(0.0, 0.5, size=(max_len, d)), requires_grad=True),
            frame_position=Tensor(rng.normal(0.0, 0.5, size=(max_frames, d)), requires_grad=True),
            maps=maps,
            ffn_in_bias=Tensor(np.zeros(4 * d), requires_grad=False),
            ffn_out_bias=Tensor(np.zeros(d), requires_grad=False),
            out_proj=w(d, vocab_size),
            out_bias=Tensor(np.zeros(vocab_size), requires_grad=True),
            n_heads=n_heads,
        )

    def attach_lora(self, rank: int, scale: float, rng: np.random.Generator) -> None:
        for name in FROZEN_BASE:
            W = self.maps[name]
            self.adapters[name] = LoraAdapter.create(W.shape[0], W.shape[1], rank, scale, rng)

    def named_tensors(self) -> dict[str, Tensor]:
        out = {
            "dec.token_embedding": self.token_embedding,
            "dec.prompt": self.prompt,
            "dec.target_position": self.target_position,
            "dec.frame_position": self.frame_position,
            "dec.ffn_in_bias": self.ffn_in_bias,
            "dec.ffn_out_bias": self.ffn_out_bias,
            "dec.out_proj": self.out_proj,
            "dec.out_bias": self.out_bias,
        }
        for k, v in self.maps.items():
            out[f"dec.{k}"] = v
        for k, a in self.adapters.items():
            out[f"lora.{k}.A"] = a.A
            out[f"lora.{k}.B"] = a.B
        return out

    def frozen_tensors(self) -> list[Tensor]:
        return [self.maps[n] for n in FROZEN_BASE] + [self.ffn_in_bias, self.ffn_out_bias]

    @property
    def d_model(self) -> int:
        return self.token_embedding.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.token_embedding.shape[0]


def _linear(x: Tensor, params: DecoderParams, name: str, use_lora: bool) -> Tensor:
    out = tc.matmul(x, params.maps[name])
    if use_lora:
        out = apply_lora(out, x, params.adapters.get(name))
    return out


def build_memory(z_conv: Tensor, frame_mask: np.ndarray, params: DecoderParams) -> tuple[Tensor, np.ndarray]:
    """Prepend the prompt to the visual sequence: ``(N, P + T, d)`` and its validity mask."""
    N, T, d = z_conv.shape
    if T > params.frame_position.shape[0]:
        raise ConfigurationError(f"sequence of {T} frames exceeds max_frames={params.frame_position.shape[0]}")
    visual = tc.add(z_conv, params.frame_position[:T])
    P = params.prompt.shape[0]
    prompt = tc.add(params.prompt, np.zeros((N, P, d)))
    memory = tc.concat([prompt, visual], axis=1)
    mask = np.concatenate([np.ones((N, P), dtype=bool), np.asarray(frame_mask, dtype=bool)], axis=1)
    return memory, mask


def decode_logits(z_conv: Tensor, frame_mask: np.ndarray, prefix: np.ndarray, params: DecoderParams,
                  use_lora: bool = True) -> Tensor:
    """Next-token logits ``(N, U, V)`` for every position of the target prefix.

    ``prefix`` is an ``(N, U)`` id array whose first column is ``<bos>``.
    """
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.ndim != 2 or prefix.shape[1] == 0:
        raise ValueError("target prefix must be a non-empty (N, U) id array")
    if np.any(prefix[:, 0] != BOS):
        raise ValueError("target prefix must begin with <bos>")
    V = params.vocab_size
    prefix = np.where((prefix < 0) | (prefix >= V), UNK, prefix)
    N, U = prefix.shape
    if U > params.target_position.shape[0]:
        raise ConfigurationError(f"prefix length {U} exceeds max_len={params.target_position.shape[0]}")
    memory, mem_mask = build_memory(z_conv, frame_mask, params)
    heads = params.n_heads
    x = tc.add(tc.embed(params.token_embedding, prefix), params.target_position[:U])

    causal = np.tril(np.ones((U, U), dtype=bool))[None]
    q = _linear(x, params, "self_q", use_lora)
    k = _linear(x, params, "self_k", use_lora)
    v = _linear(x, params, "self_v", use_lora)
    h = tc.add(x, tc.matmul(attention(q, k, v, heads, causal), params.maps["self_o"]))

    q = tc.matmul(h, params.maps["cross_q"])
    k = tc.matmul(memory, params.maps["cross_k"])
    v = tc.matmul(memory, params.maps["cross_v"])
    h = tc.add(h, tc.matmul(attention(q, k, v, heads, mem_mask[:, None, :]), params.maps["cross_o"]))

    f = tc.relu(tc.add(_linear(h, params, "ffn_in", use_lora), params.ffn_in_bias))
    h = tc.add(h, tc.add(_linear(f, params, "ffn_out", use_lora), params.ffn_out_bias))
    return tc.add(tc.matmul(h, params.out_proj), params.out_bias)


# ------------------------------------------------------------------ losses

def translation_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Token-mean cross-entropy over non-``<pad>`` targets."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {logits.shape} do not match targets {targets.shape}")
    valid = targets != PAD
    n = int(valid.sum())
    if n == 0:
        raise ValueError("every target position is <pad>")
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    onehot *= valid[..., None]
    picked = tc.sum_(tc.mul(tc.log_softmax(logits, axis=-1), onehot))
    return tc.scale(picked, -1.0 / n)


@dataclass(frozen=True)
class LossBreakdown:
    l_trans: float
    l_vt: float
    l_sm: float
    l_total: float
    alpha: float
    beta: float


def total_loss(l_trans, l_vt, l_sm, alpha: float = 1.0, beta: float = 0.2):
    """``l_trans + alpha * l_vt + beta * l_sm``.

    Accepts floats (returns a :class:`LossBreakdown`) or tensors (returns the
    combined tensor).
    """
    if alpha < 0 or beta < 0:
        raise ValueError("loss weights must be non-negative")
    if isinstance(l_trans, Tensor):
        out = l_trans
        if alpha:
            out = tc.add(out, tc.scale(l_vt, alpha))
        if beta:
            out = tc.add(out, tc.scale(l_sm, beta))
        return out
    parts = (float(l_trans), float(l_vt), float(l_sm))
    if not all(math.isfinite(p) for p in parts):
        raise ValueError(f"non-finite loss component in {parts}")
    return LossBreakdown(parts[0], parts[1], parts[2], parts[0] + alpha * parts[1] + beta * parts[2], alpha, beta)


# --------------------------------------------------------------- decoding

def greedy_translate(z_conv: Tensor, frame_mask: np.ndarray, params: DecoderParams, max_len: int,
                     use_lora: bool = True) -> list[list[int]]:
    """Argmax decoding from ``<bos>`` until ``<eos>`` or ``max_len`` tokens.

    ``<pad>`` and ``<bos>`` are never emitted; ties go to the lowest id.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    N = z_conv.shape[0]
    prefix = np.full((N, 1), BOS, dtype=np.int64)
    done = np.zeros(N, dtype=bool)
    out: list[list[int]] = [[] for _ in range(N)]
    with tc.no_grad():
        for _ in range(max_len):
            logits = decode_logits(z_conv, frame_mask, prefix, params, use_lora).data[:, -1, :].copy()
            logits[:, [PAD, BOS]] = -np.inf
            nxt = np.argmax(logits, axis=-1)
            for i in range(N):
                if done[i]:
                    continue
                if nxt[i] == EOS:
                    done[i] = True
                else:
                    out[i].append(int(nxt[i]))
            if done.all():
                break
            prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return out
