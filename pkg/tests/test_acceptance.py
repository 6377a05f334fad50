"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line.

The lines are repeated in the terminal summary (see conftest.py).
"""

import itertools
import math
import random
import time

import numpy as np
import pytest

from signclip import tensor as tc
from signclip.cli import main
from signclip.config import RunConfig
from signclip.decoder import decode_logits
from signclip.encoders import MOUTH_LANDMARKS, crop_mouth_region, mouth_box, s2_encode_frame
from signclip.encoders import FrameSequence, LandmarkStream
from signclip.fusion import FusionParams, gated_fuse, infonce
from signclip.gradcheck import gradcheck
from signclip.harness import encode_samples, evaluate, run_ablation
from signclip.metrics import bleu, lcs_length, rouge_l_sentence
from signclip.model import SignClipModel, make_optimizer, build_encoders, train_step
from signclip.synth import build_vocabulary, generate_corpus, iter_batches
from signclip.tensor import Tensor

from acceptance_log import record
from oracles import GRADCHECK_CASES, brute_bleu, exhaustive_lcs, s2_oracle, subsequences_by_length


def test_gradcheck_suite():
    start = time.perf_counter()
    worst, failures, cases = 0.0, [], 0
    for name, build in GRADCHECK_CASES.items():
        for seed in range(100):
            fn, inputs = build(np.random.default_rng(seed))
            ok, ratio = gradcheck(fn, inputs, rtol=1e-4)
            worst = max(worst, ratio)
            cases += 1
            if not ok:
                failures.append(f"{name}/{seed}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60 and len(GRADCHECK_CASES) == 10
    record("gradcheck", ok, f"{cases} cases over {len(GRADCHECK_CASES)} ops, worst ratio {worst:.2e}, "
                            f"{len(failures)} failures, {elapsed:.1f}s (< 60s)")


def test_infonce_oracle():
    rng = np.random.default_rng(0)
    single = infonce(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(1, 4))), 0.1).item()
    z = Tensor(np.tile(rng.normal(size=4), (4, 1)))
    identical = infonce(z, z, 0.1).item()
    ortho = infonce(Tensor(np.eye(2)), Tensor(np.eye(2)), 1.0).item()
    bad = 0
    for _ in range(100):
        n, d = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        tau = float(rng.uniform(0.05, 2.0))
        a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        base = infonce(Tensor(a), Tensor(b), tau).item()
        scaled = infonce(Tensor(a * rng.uniform(0.1, 10, size=(n, 1))), Tensor(b * rng.uniform(0.1, 10, (n, 1))),
                         tau).item()
        perm = rng.permutation(n)
        permuted = infonce(Tensor(a[perm]), Tensor(b[perm]), tau).item()
        bad += not (math.isclose(base, scaled, rel_tol=1e-9, abs_tol=1e-12)
                    and math.isclose(base, permuted, rel_tol=1e-9, abs_tol=1e-12))
    ok = single == 0.0 and abs(identical - math.log(4)) <= 1e-9 and \
        abs(ortho - math.log(1 + math.exp(-1))) <= 1e-9 and bad == 0
    record("infonce", ok, f"N=1 -> {single}, identical N=4 err {abs(identical - math.log(4)):.1e}, "
                          f"orthogonal err {abs(ortho - math.log(1 + math.exp(-1))):.1e}, "
                          f"{bad}/100 invariance violations")


def test_fusion_boundaries():
    rng = np.random.default_rng(1)
    d = 16
    entries, exact_bad, between_bad, forced_bad = 0, 0, 0, 0
    for seed in range(20):
        p = FusionParams.create(d, np.random.default_rng(seed))
        a, b = Tensor(rng.normal(size=(4, 6, d))), Tensor(rng.normal(size=(4, 6, d)))
        fused, g = gated_fuse(a, b, p)
        expected = g.data * a.data + (1.0 - g.data) * b.data
        exact_bad += int(np.sum(fused.data != expected))
        lo, hi = np.minimum(a.data, b.data), np.maximum(a.data, b.data)
        between_bad += int(np.sum((fused.data < lo - 1e-12) | (fused.data > hi + 1e-12)))
        entries += fused.data.size
        forced_bad += not np.array_equal(gated_fuse(a, b, p, forced_gate=1.0)[0].data, a.data)
        forced_bad += not np.array_equal(gated_fuse(a, b, p, forced_gate=0.0)[0].data, b.data)
    ok = entries >= 1000 and exact_bad == between_bad == forced_bad == 0
    record("fusion boundaries", ok, f"{entries} entries, {exact_bad} formula mismatches, "
                                    f"{between_bad} betweenness violations, {forced_bad} forced-gate mismatches")


def test_s2_oracle():
    spatial, _ = build_encoders(RunConfig())
    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(100):
        frame = rng.random((32, 32, 3))
        mismatches += not np.array_equal(s2_encode_frame(frame, spatial), s2_oracle(frame, spatial))
    record("S2 oracle", mismatches == 0, f"100 frames, {mismatches} not bit-identical to the 5-view oracle")


def test_lora_identity_and_frozen_checksums():
    cfg = RunConfig(n_train=64, n_valid=0, n_test=0)
    corpus = generate_corpus(cfg.synthetic())
    vocab = build_vocabulary(corpus)
    train = encode_samples(corpus.train, cfg)
    model = SignClipModel.create(cfg, vocab)
    model.fit_normalizer(train)
    batch = next(iter_batches(train, 16, vocab))
    fwd = model.visual(batch)
    with_lora = decode_logits(fwd.z_conv, batch.mask, batch.decoder_input, model.decoder, use_lora=True).data
    without = decode_logits(fwd.z_conv, batch.mask, batch.decoder_input, model.decoder, use_lora=False).data
    identical = np.array_equal(with_lora, without)
    before = model.frozen_checksum()
    opt = make_optimizer(cfg)
    rng = np.random.default_rng(0)
    steps = 0
    while steps < 100:
        for b in iter_batches(train, 16, vocab, rng):
            train_step(model, b, opt)
            steps += 1
            if steps == 100:
                break
    lora_moved = any(np.any(a.B.data) for a in model.decoder.adapters.values())
    same = model.frozen_checksum() == before
    record("LoRA identity", identical and same and lora_moved,
           f"B=0 logits bit-identical: {identical}; frozen checksum unchanged over {steps} steps: {same}; "
           f"adapters trained: {lora_moved}")


def test_metric_oracles():
    start = time.perf_counter()
    rng = random.Random(0)
    bleu_bad = 0
    for _ in range(500):
        n = rng.randint(1, 4)
        vocab = "abcdef"[: rng.randint(1, 6)]
        cands = [[rng.choice(vocab) for _ in range(rng.randint(0, 10))] for _ in range(n)]
        refs = [[rng.choice(vocab) for _ in range(rng.randint(1, 10))] for _ in range(n)]
        got, want = bleu(cands, refs), brute_bleu(cands, refs)
        bleu_bad += not all(math.isclose(x, y, rel_tol=1e-12, abs_tol=1e-15) for x, y in zip(got, want))
    seqs = [tuple(s) for L in range(9) for s in itertools.product("ab", repeat=L)]
    cache = {s: subsequences_by_length(s) for s in seqs}
    lcs_bad, pairs = 0, 0
    for a in seqs:
        for b in seqs:
            if len(a) <= len(b):  # LCS is symmetric; the other half is the mirror image
                pairs += 1
                lcs_bad += lcs_length(a, b) != exhaustive_lcs(a, b, cache)
    b1 = bleu([["a", "b"]], [["a", "b", "c", "d"]])[0]
    rg = rouge_l_sentence(["a", "b", "c"], ["a", "c", "b"])
    elapsed = time.perf_counter() - start
    ok = bleu_bad == 0 and lcs_bad == 0 and abs(b1 - math.exp(-1)) < 1e-12 and abs(rg - 2 / 3) < 1e-12 \
        and elapsed < 30
    record("metric oracles", ok, f"BLEU {bleu_bad}/500 mismatches; LCS {lcs_bad}/{pairs} mismatches (all pairs "
                                 f"over {{a,b}} up to length 8); BLEU-1 {b1:.4f}; ROUGE-L {rg:.4f}; "
                                 f"{elapsed:.1f}s (< 30s)")


def test_overfit_smoke():
    start = time.perf_counter()
    cfg = RunConfig(n_train=16, n_valid=0, n_test=0, batch_size=16)
    corpus = generate_corpus(cfg.synthetic())
    vocab = build_vocabulary(corpus)
    train = encode_samples(corpus.train, cfg)
    model = SignClipModel.create(cfg, vocab)
    model.fit_normalizer(train)
    opt = make_optimizer(cfg)
    rng = np.random.default_rng(0)
    for _ in range(200):
        train_step(model, next(iter_batches(train, 16, vocab, rng)), opt)
    with tc.no_grad():
        l_trans = model.losses(next(iter_batches(train, 16, vocab)))[0].item()
    b4 = evaluate(model, train).bleu4
    elapsed = time.perf_counter() - start
    record("overfit smoke", l_trans < 0.1 and b4 > 0.9 and elapsed < 180,
           f"16 samples, 200 steps: train l_trans {l_trans:.4f} (< 0.1), train BLEU-4 {b4:.4f} (> 0.9), "
           f"{elapsed:.1f}s (< 180s)")


def test_ablation_ordering():
    start = time.perf_counter()
    cfg = RunConfig()
    corpus = generate_corpus(cfg.synthetic())
    vocab = build_vocabulary(corpus)
    rows = run_ablation(cfg, encode_samples(corpus.train, cfg), encode_samples(corpus.test, cfg), vocab)
    b4 = {r.spec.name: r.report.bleu4 for r in rows}
    elapsed = time.perf_counter() - start
    full, se, le = b4["SE+LE+VT+SM"], b4["SE"], b4["LE"]
    checks = {
        "full > SE+LE+VT": full > b4["SE+LE+VT"],
        "SE+LE+VT >= SE+VT": b4["SE+LE+VT"] >= b4["SE+VT"],
        "SE+VT > SE": b4["SE+VT"] > se,
        "LE < SE": le < se,
        "full - SE >= 0.03": full - se >= 0.03,
        "< 20 min": elapsed < 1200,
    }
    table = ", ".join(f"{k} {v:.4f}" for k, v in b4.items())
    failed = [k for k, v in checks.items() if not v]
    record("ablation ordering", not failed, f"mean BLEU-4 over {cfg.ablation_seeds} seeds: {table}; "
                                            f"failed: {failed or 'none'}; {elapsed:.0f}s")


def test_determinism(tmp_path):
    (tmp_path / "run.cfg").write_text("n_train = 40\nn_valid = 8\nn_test = 12\nepochs = 3\nseed = 5\n")
    cfg = str(tmp_path / "run.cfg")
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["generate", "--config", cfg, "--out", str(d / "corpus")]) == 0
        assert main(["train", str(d / "corpus"), "--config", cfg, "--out", str(d / "m.ckpt")]) == 0
        assert main(["eval", str(d / "m.ckpt"), str(d / "corpus"), "--out", str(d / "report.tsv")]) == 0
        outputs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    same = outputs[0].keys() == outputs[1].keys() and all(outputs[0][k] == outputs[1][k] for k in outputs[0])
    record("determinism", same, f"{len(outputs[0])} files from generate/train/eval, byte-identical: {same}")


def test_crop_geometry():
    pts = np.full((68, 2), 50.0)
    pts[MOUTH_LANDMARKS] = np.stack([np.linspace(40, 60, 20), np.linspace(70, 80, 20)], axis=1)
    box = mouth_box(pts, 0.10)
    rng = np.random.default_rng(3)
    outside = 0
    for _ in range(100):
        lm = rng.uniform(5, 90, size=(2, 68, 2))
        clip = crop_mouth_region(FrameSequence(np.zeros((2, 96, 96, 1))), LandmarkStream(lm), 0.10)
        for t in range(2):
            x0, y0, x1, y1 = clip.crop_boxes[t]
            m = lm[t, MOUTH_LANDMARKS]
            outside += int(np.sum((m[:, 0] < x0) | (m[:, 0] > x1) | (m[:, 1] < y0) | (m[:, 1] > y1)))
    ok = box == (38.0, 68.0, 62.0, 82.0) and outside == 0
    record("crop geometry", ok, f"(40,70,60,80) -> {tuple(round(v, 6) for v in box)}; "
                                f"{outside} mouth landmarks outside their box over 200 frames")
