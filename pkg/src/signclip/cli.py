"""``signclip`` command line: generate | train | eval | ablate | export-emb.

Exit status: 0 on success, 1 for usage errors (bad arguments, unknown config
keys), 2 for runtime failures (unreadable corpus, divergence, ...).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .config import ConfigKeyError, RunConfig, load_config
from .formats import CorpusFormatError, read_corpus, write_corpus
from .harness import ablation_tsv, encode_samples, evaluate, export_embeddings, report_text, report_tsv, \
    run_ablation, train_model
from .model import TrainingDivergedError, load_checkpoint, save_checkpoint
from .synth import SPLITS, ConfigError, build_vocabulary, generate_corpus

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        raise UsageError(f"config {args.config}: {exc}") from exc
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _with_corpus(cfg: RunConfig, corpus) -> RunConfig:
    """Adopt the corpus's own generation settings (frame size, signs, ...)."""
    return cfg.with_overrides(**asdict(corpus.config))


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty (use --force to overwrite)")
    corpus = generate_corpus(cfg.synthetic())
    write_corpus(corpus, out)
    print(f"wrote {len(corpus.all_samples())} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    corpus = read_corpus(args.corpus, splits=("train", "valid"))
    cfg = _with_corpus(cfg, corpus)
    vocab = build_vocabulary(corpus)
    train = encode_samples(corpus.train, cfg)
    valid = encode_samples(corpus.valid, cfg)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.tsv")
    model, history = train_model(cfg, train, vocab, valid, log_path=log_path)
    save_checkpoint(model, out)
    last = history[-1] if history else None
    print(f"wrote {out} and {log_path}" + (f" (final l_trans {last.l_trans:.4f})" if last else ""))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = read_corpus(args.corpus, splits=(args.split,))
    report = evaluate(model, encode_samples(corpus.split(args.split), model.config))
    if args.out:
        Path(args.out).write_text(report_tsv(report, args.split))
    sys.stdout.write(report_text(report))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    corpus = read_corpus(args.corpus, splits=("train", args.split))
    cfg = _with_corpus(cfg, corpus)
    if not corpus.pairs:
        raise UsageError("the ablation needs a corpus with ambiguous pairs")
    vocab = build_vocabulary(corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(cfg, encode_samples(corpus.train, cfg), encode_samples(corpus.split(args.split), cfg),
                        vocab, checkpoint_dir=out)
    text = ablation_tsv(rows)
    (out / "ablation.tsv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_export(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = read_corpus(args.corpus, splits=(args.split,))
    text = export_embeddings(model, encode_samples(corpus.split(args.split), model.config))
    Path(args.out).write_text(text)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="signclip", description="Toy gloss-free sign translation with gated dual-stream fusion.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key = value config file (defaults apply to missing keys)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    g = sub.add_parser("generate", help="write a synthetic corpus directory")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true", help="write into a non-empty directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model; writes a checkpoint and a per-epoch TSV log")
    t.add_argument("corpus")
    common(t)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="log path (default: checkpoint path with .log.tsv suffix)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    e.add_argument("checkpoint")
    e.add_argument("corpus")
    e.add_argument("--split", choices=SPLITS, default="test")
    e.add_argument("--out", help="also write the report as TSV")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score the six ablation rows")
    a.add_argument("corpus")
    common(a)
    a.add_argument("--split", choices=SPLITS, default="test")
    a.add_argument("--out", required=True, help="directory for ablation.tsv and the row checkpoints")
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-emb", help="2-D PCA of per-token fused features")
    x.add_argument("checkpoint")
    x.add_argument("corpus")
    x.add_argument("--split", choices=SPLITS, default="test")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigKeyError, ConfigError) as exc:
        print(f"signclip {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, CorpusFormatError, OSError, ValueError) as exc:
        print(f"signclip {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
