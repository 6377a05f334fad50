"""The trainable model: frozen stub encoders, fusion, pooling heads and decoder.

Also holds the optimizer, one training step and the checkpoint container.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tc
from .config import RunConfig, parse_config_text
from .decoder import EOS, PAD, DecoderParams, LossBreakdown, Vocabulary, decode_logits, greedy_translate, \
    total_loss, translation_loss
from .encoders import LandmarkStream, FrameSequence, StubEncoder, crop_mouth_region, encode_mouth_sequence, \
    encode_spatial_sequence
from .fusion import FusionParams, gated_fuse, infonce, pool_global, project_spatial, temporal_project
from .synth import Batch, EncodedSample
from .tensor import DegenerateEmbeddingError, Tensor

CHECKPOINT_MAGIC = b"SIGNCLIP-CHECKPOINT 1\n"

# SeedSequence spawn keys for the model's random draws (corpus streams use 0-3)
INIT_STREAM = 100
SHUFFLE_STREAM = 101


class TrainingDivergedError(RuntimeError):
    def __init__(self, component: str, value: float):
        super().__init__(f"non-finite {component} ({value}); training aborted")
        self.component = component


def model_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def build_encoders(config: RunConfig) -> tuple[StubEncoder, StubEncoder]:
    """Spatial and lip stubs. Seeded from ``encoder_seed`` only, so every
    training seed sees the same frozen features."""
    r = config.base_res
    spatial = StubEncoder.random(config.encoder_seed, (r, r), (config.spatial_grid, config.spatial_grid),
                                 config.channels, config.d_model)
    k = config.lip_downsample
    lip = StubEncoder.random(config.encoder_seed + 1, (config.mouth_height, config.mouth_width),
                             (config.mouth_height // k, config.mouth_width // k), config.channels, config.d_model)
    return spatial, lip


def encode_sample(video: FrameSequence, landmarks: LandmarkStream, words, config: RunConfig,
                  encoders: tuple[StubEncoder, StubEncoder], key: str = "", ambiguity_tags=()) -> EncodedSample:
    spatial, lip = encoders
    z_s = encode_spatial_sequence(video, spatial).values
    clip = crop_mouth_region(video, landmarks, config.crop_margin, (config.mouth_height, config.mouth_width))
    z_m = encode_mouth_sequence(clip, lip).values
    return EncodedSample(z_s=z_s, z_m=z_m, words=tuple(words), ambiguity_tags=tuple(ambiguity_tags), key=key)


@dataclass
class Forward:
    z_sp: Tensor
    z_m: Tensor
    fused: Tensor
    gate: Tensor
    z_conv: Tensor


@dataclass
class SignClipModel:
    config: RunConfig
    vocab: Vocabulary
    seed: int
    encoders: tuple[StubEncoder, StubEncoder]
    fusion: FusionParams
    decoder: DecoderParams
    text_embedding: Tensor  # (V, d) toy text encoder for z_t
    # fixed per-dimension standardisation of the frozen features, fitted on train
    feature_stats: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def create(cls, config: RunConfig, vocab: Vocabulary, seed: int | None = None) -> "SignClipModel":
        seed = config.seed if seed is None else seed
        rng = model_rng(seed, INIT_STREAM)
        fusion = FusionParams.create(config.d_model, rng, config.kernel_width, config.tau)
        decoder = DecoderParams.create(len(vocab), config.d_model, rng, n_heads=config.n_heads,
                                       prompt_len=config.prompt_len)
        decoder.attach_lora(config.lora_rank, config.lora_scale, rng)
        text = Tensor(rng.normal(0.0, 1.0, size=(len(vocab), config.d_model)), requires_grad=True)
        d = config.d_model
        stats = {
            "norm.spatial_mean": Tensor(np.zeros(2 * d)), "norm.spatial_std": Tensor(np.ones(2 * d)),
            "norm.mouth_mean": Tensor(np.zeros(d)), "norm.mouth_std": Tensor(np.ones(d)),
        }
        return cls(config, vocab, seed, build_encoders(config), fusion, decoder, text, stats)

    # ------------------------------------------------------------ params

    def named_tensors(self) -> dict[str, Tensor]:
        return {**self.fusion.named_tensors(), **self.decoder.named_tensors(), "text.embedding": self.text_embedding,
                **self.feature_stats}

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.named_tensors().items() if t.requires_grad}

    def frozen_checksum(self) -> str:
        """Digest of everything training must leave untouched."""
        stubs = [Tensor(e.weights) for e in self.encoders]
        return tc.parameters_checksum(stubs + self.decoder.frozen_tensors())

    @property
    def forced_gate(self) -> float | None:
        if not self.config.use_mouth:
            return 1.0
        if not self.config.use_spatial:
            return 0.0
        return None

    def fit_normalizer(self, samples) -> None:
        """Set the feature standardisation from encoded training samples."""
        for stream, key in (("spatial", "z_s"), ("mouth", "z_m")):
            rows = np.concatenate([getattr(s, key) for s in samples])
            self.feature_stats[f"norm.{stream}_mean"].data[...] = rows.mean(axis=0)
            self.feature_stats[f"norm.{stream}_std"].data[...] = np.maximum(rows.std(axis=0), 1e-6)

    def _standardise(self, x: np.ndarray, stream: str) -> np.ndarray:
        return (x - self.feature_stats[f"norm.{stream}_mean"].data) / self.feature_stats[f"norm.{stream}_std"].data

    # ----------------------------------------------------------- forward

    def encode(self, sample) -> EncodedSample:
        return encode_sample(sample.video, sample.landmarks, sample.words, self.config, self.encoders,
                             ambiguity_tags=getattr(sample, "ambiguity_tags", ()))

    def visual(self, batch: Batch) -> Forward:
        z_s = self._standardise(batch.z_s, "spatial") if self.config.use_spatial else np.zeros_like(batch.z_s)
        z_m = self._standardise(batch.z_m, "mouth") if self.config.use_mouth else np.zeros_like(batch.z_m)
        z_sp = project_spatial(Tensor(z_s), self.fusion)
        zm = Tensor(z_m)
        fused, g = gated_fuse(z_sp, zm, self.fusion, forced_gate=self.forced_gate)
        z_conv = temporal_project(fused, self.fusion, batch.mask)
        return Forward(z_sp, zm, fused, g, z_conv)

    def losses(self, batch: Batch, fwd: Forward | None = None) -> tuple[Tensor, Tensor | None, Tensor | None]:
        """``(l_trans, l_vt, l_sm)``; an alignment loss is None when its
        embeddings are degenerate (an ablated, all-zero stream)."""
        fwd = fwd or self.visual(batch)
        logits = decode_logits(fwd.z_conv, batch.mask, batch.decoder_input, self.decoder)
        l_trans = translation_loss(logits, batch.targets)

        z_v = pool_global(fwd.z_conv, self.fusion.pool_visual, batch.mask)
        content = (batch.targets != PAD) & (batch.targets != EOS)
        z_t = tc.mean_pool_time(tc.embed(self.text_embedding, batch.targets), content)
        z_s = pool_global(fwd.z_sp, self.fusion.pool_spatial, batch.mask)
        z_m = pool_global(fwd.z_m, self.fusion.pool_mouth, batch.mask)
        tau = self.fusion.temperature
        return l_trans, _safe_infonce(z_v, z_t, tau), _safe_infonce(z_s, z_m, tau)

    def translate(self, batch: Batch, max_len: int | None = None) -> list[list[str]]:
        with tc.no_grad():
            fwd = self.visual(batch)
            ids = greedy_translate(fwd.z_conv, batch.mask, self.decoder, max_len or self.config.max_decode_len)
        return [self.vocab.decode(seq) for seq in ids]


def _safe_infonce(a: Tensor, b: Tensor, tau: float) -> Tensor | None:
    try:
        return infonce(a, b, tau)
    except DegenerateEmbeddingError:
        return None


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamW:
    """Adam with decoupled weight decay (applied to matrices, not vectors)."""

    lr: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = p.grad
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and p.data.ndim >= 2:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values()))
    if max_norm > 0 and total > max_norm:
        for p in params.values():
            p.grad *= max_norm / total
    return total


def train_step(model: SignClipModel, batch: Batch, optimizer: AdamW, alpha: float | None = None,
               beta: float | None = None) -> LossBreakdown:
    """One forward/backward/update. Returns the pre-update losses.

    ``l_vt`` and ``l_sm`` are always computed and reported; a zero weight only
    removes them from the objective.
    """
    alpha = model.config.alpha if alpha is None else alpha
    beta = model.config.beta if beta is None else beta
    params = model.trainable()
    for p in params.values():
        p.zero_grad()
    l_trans, l_vt, l_sm = model.losses(batch)
    values = {
        "l_trans": l_trans.item(),
        "l_vt": 0.0 if l_vt is None else l_vt.item(),
        "l_sm": 0.0 if l_sm is None else l_sm.item(),
    }
    for name, value in values.items():
        if not math.isfinite(value):
            raise TrainingDivergedError(name, value)
    # an ablated stream has no alignment loss to optimise
    objective = total_loss(l_trans, l_vt, l_sm,
                           alpha if l_vt is not None else 0.0, beta if l_sm is not None else 0.0)
    objective.backward()
    clip_gradients(params, model.config.grad_clip)
    optimizer.step(params)
    return total_loss(values["l_trans"], values["l_vt"], values["l_sm"], alpha, beta)


def make_optimizer(config: RunConfig) -> AdamW:
    return AdamW(lr=config.lr, weight_decay=config.weight_decay)


# --------------------------------------------------------------- checkpoint
#
# Layout: the magic line, one line of JSON (config echo, seed, vocabulary and
# a table of tensors with name, shape and byte offset), then the tensors as
# little-endian float64 in table order.

def save_checkpoint(model: SignClipModel, path: str | Path) -> None:
    table = []
    chunks = []
    offset = 0
    for name, t in model.named_tensors().items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": model.config.to_text(),
        "seed": model.seed,
        "vocab": model.vocab.words,
        "tensors": table,
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for c in chunks:
            fh.write(c)


def load_checkpoint(path: str | Path) -> SignClipModel:
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    end = blob.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(blob[len(CHECKPOINT_MAGIC):end])
    data = blob[end + 1:]
    config = parse_config_text(header["config"])
    model = SignClipModel.create(config, Vocabulary(header["vocab"]), header["seed"])
    tensors = model.named_tensors()
    if sorted(tensors) != sorted(e["name"] for e in header["tensors"]):
        raise ValueError(f"{path}: tensor table does not match the model layout")
    for entry in header["tensors"]:
        t = tensors[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != t.shape:
            raise ValueError(f"{path}: tensor {entry['name']} has shape {shape}, expected {t.shape}")
        n = int(np.prod(shape))
        t.data[...] = np.frombuffer(data, dtype="<f8", count=n, offset=entry["offset"]).reshape(shape)
    return model
