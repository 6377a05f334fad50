"""Training, evaluation, the ablation grid and embedding export.

Everything here is deterministic given the run config: parameter init and
batch shuffling draw from ``SeedSequence(seed, spawn_key=(stream,))`` and the
frozen encoders from ``encoder_seed``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .decoder import Vocabulary
from .metrics import ScoreReport, score_corpus
from .model import SHUFFLE_STREAM, SignClipModel, build_encoders, encode_sample, make_optimizer, model_rng, \
    save_checkpoint, train_step
from .synth import EncodedSample, build_vocabulary, iter_batches
from .tensor import no_grad

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "l_trans", "l_vt", "l_sm", "l_total", "valid_bleu4")
REPORT_COLUMNS = ("split", "n_sentences", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l")
ABLATION_COLUMNS = ("row", "se", "le", "vt_align", "sm_align", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l",
                    "bleu4_per_seed")
EMBEDDING_COLUMNS = ("token", "x", "y")
EVAL_BATCH = 50


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# ---------------------------------------------------------------- encoding

def encode_samples(samples, config: RunConfig) -> list[EncodedSample]:
    """Run the frozen encoders once over a list of samples."""
    encoders = build_encoders(config)
    return [encode_sample(s.video, s.landmarks, s.words, config, encoders, key=getattr(s, "key", str(i)),
                          ambiguity_tags=s.ambiguity_tags) for i, s in enumerate(samples)]


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class EpochLog:
    epoch: int
    l_trans: float
    l_vt: float
    l_sm: float
    l_total: float
    valid_bleu4: float

    def row(self) -> str:
        return "\t".join([str(self.epoch)] + [_fmt(v) for v in (self.l_trans, self.l_vt, self.l_sm, self.l_total,
                                                                self.valid_bleu4)]) + "\n"


def train_model(config: RunConfig, train: Sequence[EncodedSample], vocab: Vocabulary,
                valid: Sequence[EncodedSample] = (), log_path: str | Path | None = None,
                epochs: int | None = None) -> tuple[SignClipModel, list[EpochLog]]:
    """Train from scratch. Each epoch's mean losses are appended to ``log_path``
    as they complete, so a diverged run leaves its partial log behind."""
    model = SignClipModel.create(config, vocab)
    model.fit_normalizer(train)
    optimizer = make_optimizer(config)
    rng = model_rng(config.seed, SHUFFLE_STREAM)
    history = []
    fh = open(log_path, "w") if log_path is not None else None
    try:
        if fh:
            fh.write("\t".join(LOG_COLUMNS) + "\n")
            fh.flush()
        for epoch in range(1, (config.epochs if epochs is None else epochs) + 1):
            sums = np.zeros(4)
            count = 0
            for batch in iter_batches(train, config.batch_size, vocab, rng):
                lb = train_step(model, batch, optimizer)
                sums += batch.size * np.array([lb.l_trans, lb.l_vt, lb.l_sm, lb.l_total])
                count += batch.size
            means = sums / count
            valid_b4 = evaluate(model, valid).bleu4 if valid else 0.0
            entry = EpochLog(epoch, *means.tolist(), valid_b4)
            history.append(entry)
            log.info("epoch %d l_trans %.4f l_total %.4f valid_bleu4 %.4f", epoch, entry.l_trans, entry.l_total,
                     valid_b4)
            if fh:
                fh.write(entry.row())
                fh.flush()
    finally:
        if fh:
            fh.close()
    return model, history


# -------------------------------------------------------------- evaluation

def translate_all(model: SignClipModel, samples: Sequence[EncodedSample]) -> list[list[str]]:
    out = []
    for batch in iter_batches(list(samples), EVAL_BATCH, model.vocab):
        out.extend(model.translate(batch))
    return out


def evaluate(model: SignClipModel, samples: Sequence[EncodedSample]) -> ScoreReport:
    hyps = translate_all(model, samples)
    return score_corpus([" ".join(h) for h in hyps], [" ".join(s.words) for s in samples])


def report_tsv(report: ScoreReport, split: str) -> str:
    values = [split, str(report.n_sentences)] + [_fmt(v) for v in report.as_row()]
    return "\t".join(REPORT_COLUMNS) + "\n" + "\t".join(values) + "\n"


def report_text(report: ScoreReport) -> str:
    head = f"{'B1':>7} {'B2':>7} {'B3':>7} {'B4':>7} {'RG':>7}"
    row = " ".join(f"{100 * v:7.2f}" for v in report.as_row())
    return f"{head}\n{row}\n({report.n_sentences} sentences; BLEU with add-0.1 smoothing for n >= 2)\n"


# ---------------------------------------------------------------- ablation

@dataclass(frozen=True)
class AblationSpec:
    name: str
    se: bool
    le: bool
    vt: bool
    sm: bool

    def overrides(self, config: RunConfig) -> dict:
        return {
            "use_spatial": self.se,
            "use_mouth": self.le,
            "alpha": config.alpha if self.vt else 0.0,
            "beta": config.beta if self.sm else 0.0,
        }


ABLATION_GRID = (
    AblationSpec("SE", True, False, False, False),
    AblationSpec("LE", False, True, False, False),
    AblationSpec("SE+LE", True, True, False, False),
    AblationSpec("SE+VT", True, False, True, False),
    AblationSpec("SE+LE+VT", True, True, True, False),
    AblationSpec("SE+LE+VT+SM", True, True, True, True),
)


@dataclass(frozen=True)
class AblationRow:
    spec: AblationSpec
    report: ScoreReport  # mean over seeds
    bleu4_per_seed: tuple[float, ...]

    def tsv(self) -> str:
        s = self.spec
        flags = ["1" if f else "0" for f in (s.se, s.le, s.vt, s.sm)]
        scores = [_fmt(v) for v in self.report.as_row()]
        per_seed = ",".join(_fmt(v) for v in self.bleu4_per_seed)
        return "\t".join([s.name] + flags + scores + [per_seed]) + "\n"


def run_ablation(config: RunConfig, train, test, vocab: Vocabulary, seeds: Sequence[int] | None = None,
                 checkpoint_dir: str | Path | None = None, grid=ABLATION_GRID) -> list[AblationRow]:
    """Train and score every grid row under identical seeds and budgets."""
    seeds = list(range(config.seed, config.seed + config.ablation_seeds)) if seeds is None else list(seeds)
    rows = []
    for spec in grid:
        reports = []
        for seed in seeds:
            cfg = config.with_overrides(seed=seed, **spec.overrides(config))
            model, _ = train_model(cfg, train, vocab)
            reports.append(evaluate(model, test))
            if checkpoint_dir is not None:
                save_checkpoint(model, Path(checkpoint_dir) / f"{spec.name}.seed{seed}.ckpt")
        mean = np.mean([r.as_row() for r in reports], axis=0)
        rows.append(AblationRow(spec, ScoreReport(*mean.tolist(), n_sentences=reports[0].n_sentences),
                                tuple(r.bleu4 for r in reports)))
        log.info("ablation %s bleu4 %.4f", spec.name, rows[-1].report.bleu4)
    return rows


def ablation_tsv(rows: Sequence[AblationRow]) -> str:
    return "\t".join(ABLATION_COLUMNS) + "\n" + "".join(r.tsv() for r in rows)


# ---------------------------------------------------------- embedding export

def token_features(model: SignClipModel, samples: Sequence[EncodedSample]) -> tuple[list[str], np.ndarray]:
    """Fused features averaged over each target token's frames.

    Sign ``k`` of a sample occupies frames ``[k * F, (k + 1) * F)`` with
    ``F = frames_per_sign``.
    """
    F = model.config.frames_per_sign
    tokens, vecs = [], []
    for batch_start in range(0, len(samples), EVAL_BATCH):
        chunk = list(samples[batch_start:batch_start + EVAL_BATCH])
        batch = next(iter_batches(chunk, len(chunk), model.vocab))
        with no_grad():
            fused = model.visual(batch).fused.data
        for i, s in enumerate(chunk):
            for k, w in enumerate(s.words):
                tokens.append(w)
                vecs.append(fused[i, k * F:(k + 1) * F].mean(axis=0))
    return tokens, np.array(vecs)


def _top_eigenvector(C: np.ndarray, iters: int = 10000, tol: float = 1e-13) -> tuple[np.ndarray, float]:
    d = C.shape[0]
    v = np.arange(1, d + 1, dtype=np.float64)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    # fix the sign: largest-magnitude entry positive
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v, float(v @ C @ v)


def pca_2d(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project rows of ``X`` onto the top two principal directions.

    Power iteration on the centred covariance, deflating after the first
    component. Returns ``(coords (n, 2), components (2, d))``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("PCA needs at least two rows")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / X.shape[0]
    v1, lam1 = _top_eigenvector(C)
    v2, _ = _top_eigenvector(C - lam1 * np.outer(v1, v1))
    # keep the second direction orthogonal to the first despite rounding
    v2 = v2 - (v2 @ v1) * v1
    n2 = np.linalg.norm(v2)
    v2 = v2 / n2 if n2 > 0 else v2
    comps = np.stack([v1, v2])
    return Xc @ comps.T, comps


def export_embeddings(model: SignClipModel, samples: Sequence[EncodedSample]) -> str:
    tokens, feats = token_features(model, samples)
    if len(set(tokens)) < 3:
        raise ValueError(f"need at least 3 distinct tokens for the projection, got {len(set(tokens))}")
    coords, _ = pca_2d(feats)
    lines = ["\t".join(EMBEDDING_COLUMNS) + "\n"]
    lines += [f"{t}\t{x:.10f}\t{y:.10f}\n" for t, (x, y) in zip(tokens, coords)]
    return "".join(lines)
