import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from signclip import tensor as tc
from signclip.decoder import (BOS, EOS, PAD, UNK, DecoderParams, LoraAdapter, Vocabulary, apply_lora,
                              decode_logits, greedy_translate, total_loss, translation_loss)
from signclip.tensor import ConfigurationError, Tensor

D, V = 8, 9


def make_params(seed=0, lora=True, max_len=16):
    rng = np.random.default_rng(seed)
    p = DecoderParams.create(V, D, rng, n_heads=2, prompt_len=3, max_len=max_len, max_frames=12)
    if lora:
        p.attach_lora(2, 1.0, rng)
    return p


def memory(seed=0, N=2, T=5):
    return Tensor(np.random.default_rng(seed).normal(size=(N, T, D))), np.ones((N, T), dtype=bool)


# -------------------------------------------------------------- vocabulary

def test_vocabulary_reserved_ids_and_round_trip():
    v = Vocabulary(["rain", "sun"])
    assert len(v) == 6 and v.tokens[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    for w in v.words:
        assert v.id_to_token(v.token_to_id(w)) == w
    assert v.token_to_id("hail") == UNK


def test_vocabulary_decode_stops_at_eos_and_skips_specials():
    v = Vocabulary(["a", "b"])
    assert v.decode([BOS, 4, PAD, 5, EOS, 4]) == ["a", "b"]


def test_vocabulary_rejects_duplicates_and_reserved():
    with pytest.raises(ValueError):
        Vocabulary(["a", "a"])
    with pytest.raises(ValueError):
        Vocabulary(["<eos>"])


# -------------------------------------------------------------------- LoRA

def test_lora_zero_init_is_exact_identity():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(3, 6)))
    base = tc.matmul(x, Tensor(rng.normal(size=(6, 5))))
    ad = LoraAdapter.create(6, 5, 2, 1.0, rng)
    assert np.array_equal(apply_lora(base, x, ad).data, base.data)


def test_lora_dense_delta_oracle():
    # delta = P Q with rank r = min(d_in, d_out); row-vector form x A^T B^T = x delta
    rng = np.random.default_rng(2)
    d_in, d_out = 4, 3
    W = rng.normal(size=(d_in, d_out))
    P, Q = rng.normal(size=(d_in, d_out)), rng.normal(size=(d_out, d_out))
    ad = LoraAdapter(Tensor(P.T), Tensor(Q.T), 1.0)
    x = rng.normal(size=(5, d_in))
    out = apply_lora(Tensor(x @ W), Tensor(x), ad).data
    np.testing.assert_allclose(out, x @ (W + P @ Q), rtol=1e-12, atol=1e-12)


def test_lora_rank_must_be_small():
    with pytest.raises(ConfigurationError):
        LoraAdapter.create(4, 4, 4, 1.0, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        LoraAdapter.create(4, 4, 0, 1.0, np.random.default_rng(0))


def test_lora_shape_mismatch():
    ad = LoraAdapter.create(4, 3, 2, 1.0, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        apply_lora(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 5))), ad)


def test_adapters_attached_bit_identical_to_detached():
    p = make_params(3)
    z, mask = memory(3)
    prefix = np.array([[BOS, 4, 5], [BOS, 6, 7]])
    a = decode_logits(z, mask, prefix, p, use_lora=True).data
    b = decode_logits(z, mask, prefix, p, use_lora=False).data
    assert np.array_equal(a, b)


# ----------------------------------------------------------------- logits

def test_logit_shape_law():
    p = make_params()
    z, mask = memory(T=4, N=3)
    out = decode_logits(z, mask, np.full((3, 5), BOS), p)
    assert out.shape == (3, 5, V)


def test_prefix_contract():
    p = make_params()
    z, mask = memory()
    with pytest.raises(ValueError):
        decode_logits(z, mask, np.zeros((2, 0), dtype=int), p)
    with pytest.raises(ValueError):
        decode_logits(z, mask, np.array([[4, 5], [BOS, 5]]), p)


def test_unknown_ids_map_to_unk():
    p = make_params()
    z, mask = memory()
    a = decode_logits(z, mask, np.array([[BOS, 99], [BOS, -4]]), p).data
    b = decode_logits(z, mask, np.array([[BOS, UNK], [BOS, UNK]]), p).data
    assert np.array_equal(a, b)


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(0, V - 1))
def test_causality(seed, j, new_token):
    rng = np.random.default_rng(seed)
    p = make_params(seed % 5)
    z, mask = memory(seed)
    prefix = np.concatenate([np.full((2, 1), BOS), rng.integers(0, V, size=(2, 5))], axis=1)
    changed = prefix.copy()
    changed[:, j] = new_token
    a = decode_logits(z, mask, prefix, p).data
    b = decode_logits(z, mask, changed, p).data
    assert np.array_equal(a[:, :j], b[:, :j])


def test_padding_frames_are_ignored():
    p = make_params()
    z, _ = memory(4, N=1, T=6)
    mask = np.array([[True] * 4 + [False] * 2])
    other = z.data.copy()
    other[0, 4:] = 123.0
    prefix = np.array([[BOS, 4]])
    a = decode_logits(z, mask, prefix, p).data
    b = decode_logits(Tensor(other), mask, prefix, p).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _mha(q, k, v, heads, allowed):
    U, d = q.shape
    dh = d // heads
    out = np.zeros_like(q)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        s = np.where(allowed, s, -1e9)
        out[:, sl] = _softmax(s) @ v[:, sl]
    return out


def test_logits_match_hand_rolled_forward():
    p = make_params(6)
    for ad in p.adapters.values():  # make the adapters matter
        ad.B.data[...] = np.random.default_rng(7).normal(size=ad.B.shape) * 0.3
    z, _ = memory(6, N=1, T=4)
    mask = np.array([[True, True, True, False]])
    prefix = np.array([[BOS, 5, 7]])
    M = p.maps

    def lin(x, name):
        out = x @ M[name].data
        if name in p.adapters:
            ad = p.adapters[name]
            out = out + ad.scale * (x @ ad.A.data.T) @ ad.B.data.T
        return out

    x = p.token_embedding.data[prefix[0]] + p.target_position.data[:3]
    h = x + _mha(lin(x, "self_q"), lin(x, "self_k"), lin(x, "self_v"), 2, np.tril(np.ones((3, 3), bool))) \
        @ M["self_o"].data
    mem = np.vstack([p.prompt.data, z.data[0] + p.frame_position.data[:4]])
    allowed = np.concatenate([np.ones(3, bool), mask[0]])[None, :]
    h = h + _mha(h @ M["cross_q"].data, mem @ M["cross_k"].data, mem @ M["cross_v"].data, 2, allowed) \
        @ M["cross_o"].data
    f = np.maximum(lin(h, "ffn_in") + p.ffn_in_bias.data, 0.0)
    h = h + lin(f, "ffn_out") + p.ffn_out_bias.data
    expected = h @ p.out_proj.data + p.out_bias.data
    np.testing.assert_allclose(decode_logits(z, mask, prefix, p).data[0], expected, rtol=1e-10, atol=1e-12)


# ------------------------------------------------------------------ losses

def test_translation_loss_confident_is_zero():
    targets = np.array([[4, 5, EOS]])
    logits = np.full((1, 3, V), -1000.0)
    for u, t in enumerate(targets[0]):
        logits[0, u, t] = 1000.0
    assert translation_loss(Tensor(logits), targets).item() == 0.0


def test_translation_loss_uniform_is_log_v():
    loss = translation_loss(Tensor(np.zeros((2, 3, 4))), np.array([[1, 2, 3], [3, 2, 1]])).item()
    assert loss == pytest.approx(math.log(4), abs=1e-12)


def test_translation_loss_hand_summed_with_padding():
    rng = np.random.default_rng(8)
    logits = rng.normal(size=(1, 4, 5))
    targets = np.array([[3, 4, EOS, PAD]])
    lse = np.log(np.exp(logits[0]).sum(axis=-1))
    expected = -sum(logits[0, u, targets[0, u]] - lse[u] for u in range(3)) / 3
    assert translation_loss(Tensor(logits), targets).item() == pytest.approx(expected, rel=1e-12)


def test_translation_loss_all_pad_error():
    with pytest.raises(ValueError):
        translation_loss(Tensor(np.zeros((1, 2, 4))), np.zeros((1, 2), dtype=int))


def test_total_loss_examples():
    assert total_loss(0.7, 0.0, 0.0).l_total == 0.7
    assert total_loss(1.0, 0.5, 0.5).l_total == pytest.approx(1.6, abs=1e-15)
    lb = total_loss(1.0, 0.5, 0.5)
    assert (lb.alpha, lb.beta) == (1.0, 0.2)


def test_total_loss_beta_zero_drops_sm():
    assert total_loss(1.0, 0.5, 9.0, alpha=1.0, beta=0.0).l_total == 1.5


def test_total_loss_errors():
    with pytest.raises(ValueError):
        total_loss(1.0, float("nan"), 0.0)
    with pytest.raises(ValueError):
        total_loss(1.0, 0.0, 0.0, alpha=-1.0)


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 50), st.floats(0, 5), st.floats(0, 5))
def test_total_loss_additivity(lt, lv, ls, a, b):
    lb = total_loss(lt, lv, ls, a, b)
    assert abs(lb.l_total - (lt + a * lv + b * ls)) <= 1e-12 * max(1.0, lb.l_total)


def test_total_loss_tensor_form_matches_float_form():
    parts = [Tensor(np.array(v)) for v in (1.25, 0.5, 2.0)]
    assert total_loss(*parts, 0.3, 0.7).item() == pytest.approx(total_loss(1.25, 0.5, 2.0, 0.3, 0.7).l_total)


# ---------------------------------------------------------------- decoding

def forced_params(sequence, max_len=6):
    """All maps zero; position u's logits put 10 on sequence[u]."""
    p = make_params(lora=False, max_len=max_len)
    for t in [p.token_embedding, p.prompt, p.frame_position, p.out_proj, p.out_bias] + list(p.maps.values()):
        t.data[...] = 0.0
    p.target_position.data[...] = 0.0
    for u, tok in enumerate(sequence):
        p.target_position.data[u, u] = 1.0
        p.out_proj.data[u, tok] = 10.0
    return p


def test_greedy_all_eos_gives_empty():
    p = forced_params([EOS] * 6)
    z, mask = memory()
    assert greedy_translate(z, mask, p, max_len=5) == [[], []]


def test_greedy_fixture_sequence():
    p = forced_params([4, 6, 5, EOS, 7])
    z, mask = memory()
    assert greedy_translate(z, mask, p, max_len=6) == [[4, 6, 5], [4, 6, 5]]


def test_greedy_respects_max_len():
    p = forced_params([4, 5, 6, 7, 8, EOS])
    z, mask = memory()
    assert greedy_translate(z, mask, p, max_len=2) == [[4, 5], [4, 5]]


def test_greedy_ties_go_to_lowest_id_and_never_emit_pad_or_bos():
    p = forced_params([])
    p.out_bias.data[[PAD, BOS]] = 100.0  # masked out regardless
    z, mask = memory()
    # every allowed logit ties at 0 -> lowest allowed id is <eos>
    assert greedy_translate(z, mask, p, max_len=3) == [[], []]


@given(st.integers(0, 1000))
def test_greedy_deterministic_and_clean(seed):
    p = make_params(seed % 7)
    z, mask = memory(seed)
    a = greedy_translate(z, mask, p, max_len=6)
    assert a == greedy_translate(z, mask, p, max_len=6)
    assert all(PAD not in s and BOS not in s and EOS not in s and len(s) <= 6 for s in a)


def test_greedy_max_len_must_be_positive():
    p = make_params()
    z, mask = memory()
    with pytest.raises(ValueError):
        greedy_translate(z, mask, p, max_len=0)
