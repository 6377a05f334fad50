"""On-disk formats: video container, landmark text files and the corpus directory.

Video container (``NNNN.video``): four little-endian int64 values ``T, H, W, C``
followed by ``T*H*W*C`` little-endian float64 pixel values in row-major order.

Landmark file (``NNNN.lmk``): one line per frame holding 136 comma-separated
reals ``x1,y1,...,x68,y68``; lines starting with ``#`` are comments.

Corpus directory: ``corpus.meta`` (``key = value`` lines echoing the
generating config, seed, PRNG, split sizes, sign words and ambiguous pairs),
one ``.video`` and one ``.lmk`` per sample, and ``targets.tsv`` with an
``id<TAB>sentence`` header. Sample ids run over train, then valid, then test.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import N_LANDMARKS, FrameSequence, LandmarkStream
from .synth import PRNG_DESCRIPTION, SPLITS, Corpus, ConfigError, config_from_mapping, config_items, SyntheticConfig

HEADER = struct.Struct("<4q")
FORMAT_VERSION = 1


class CorpusFormatError(ValueError):
    pass


# -------------------------------------------------------------------- video

def write_video(path: str | Path, video: FrameSequence) -> None:
    frames = np.ascontiguousarray(video.frames, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(*frames.shape))
        fh.write(frames.tobytes())


def read_video(path: str | Path) -> FrameSequence:
    blob = Path(path).read_bytes()
    if len(blob) < HEADER.size:
        raise CorpusFormatError(f"{path}: truncated video header")
    shape = HEADER.unpack_from(blob)
    if min(shape) < 1:
        raise CorpusFormatError(f"{path}: bad video shape {shape}")
    n = int(np.prod(shape))
    if len(blob) != HEADER.size + 8 * n:
        raise CorpusFormatError(f"{path}: expected {n} values for shape {shape}")
    data = np.frombuffer(blob, dtype="<f8", offset=HEADER.size).reshape(shape)
    return FrameSequence(data.astype(np.float64))


# ---------------------------------------------------------------- landmarks

def format_landmarks(stream: LandmarkStream) -> str:
    return "".join(",".join(repr(float(v)) for v in frame.ravel()) + "\n" for frame in stream.points)


def parse_landmarks(text: str, source: str = "<landmarks>") -> LandmarkStream:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 2 * N_LANDMARKS:
            raise CorpusFormatError(f"{source}:{lineno}: expected {2 * N_LANDMARKS} values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise CorpusFormatError(f"{source}:{lineno}: non-numeric landmark value") from None
    if not rows:
        raise CorpusFormatError(f"{source}: no landmark frames")
    return LandmarkStream(np.array(rows).reshape(len(rows), N_LANDMARKS, 2))


def write_landmarks(path: str | Path, stream: LandmarkStream) -> None:
    Path(path).write_text(format_landmarks(stream))


def read_landmarks(path: str | Path) -> LandmarkStream:
    return parse_landmarks(Path(path).read_text(), str(path))


# ------------------------------------------------------------------- corpus

@dataclass(frozen=True)
class StoredSample:
    key: str
    split: str
    video: FrameSequence
    landmarks: LandmarkStream
    words: tuple[str, ...]
    ambiguity_tags: tuple[bool, ...]


@dataclass(frozen=True)
class StoredCorpus:
    config: SyntheticConfig
    words: list[str]
    pairs: list[tuple[str, str]]
    train: list[StoredSample] = field(default_factory=list)
    valid: list[StoredSample] = field(default_factory=list)
    test: list[StoredSample] = field(default_factory=list)

    def split(self, name: str) -> list[StoredSample]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {', '.join(SPLITS)}")
        return getattr(self, name)


def sample_key(i: int) -> str:
    return f"{i:04d}"


def write_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inv = corpus.inventory
    meta = [("format_version", FORMAT_VERSION), ("prng", PRNG_DESCRIPTION)]
    meta += config_items(corpus.config)
    meta += [
        ("n_samples", len(corpus.all_samples())),
        ("signs", ",".join(inv.words)),
        ("pairs", ",".join(f"{inv.words[a]}/{inv.words[b]}" for a, b in inv.pairs)),
    ]
    (out / "corpus.meta").write_text("".join(f"{k} = {v}\n" for k, v in meta))
    lines = ["id\tsentence\n"]
    for i, s in enumerate(corpus.all_samples()):
        key = sample_key(i)
        write_video(out / f"{key}.video", s.video)
        write_landmarks(out / f"{key}.lmk", s.landmarks)
        lines.append(f"{key}\t{' '.join(s.words)}\n")
    (out / "targets.tsv").write_text("".join(lines))


def read_meta(path: str | Path) -> dict[str, str]:
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CorpusFormatError(f"{path}: bad meta line {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = v
    return values


def read_corpus(corpus_dir: str | Path, splits=SPLITS) -> StoredCorpus:
    """Load a corpus directory (only the requested splits' samples)."""
    root = Path(corpus_dir)
    if not (root / "corpus.meta").is_file():
        raise CorpusFormatError(f"{root}: missing corpus.meta")
    meta = read_meta(root / "corpus.meta")
    known = {k for k, _ in config_items(SyntheticConfig())}
    try:
        config = config_from_mapping({k: v for k, v in meta.items() if k in known})
    except (ConfigError, ValueError) as exc:
        raise CorpusFormatError(f"{root}/corpus.meta: {exc}") from exc
    words = meta.get("signs", "").split(",")
    pairs = [tuple(p.split("/")) for p in meta.get("pairs", "").split(",") if p]
    ambiguous = {w for p in pairs for w in p}

    rows = (root / "targets.tsv").read_text().splitlines()
    if not rows or rows[0] != "id\tsentence":
        raise CorpusFormatError(f"{root}/targets.tsv: missing 'id<TAB>sentence' header")
    sentences = dict(r.split("\t", 1) for r in rows[1:])
    out: dict[str, list[StoredSample]] = {name: [] for name in SPLITS}
    start = 0
    for name in SPLITS:
        size = config.split_sizes[name]
        if name in splits:
            for i in range(start, start + size):
                key = sample_key(i)
                if key not in sentences:
                    raise CorpusFormatError(f"{root}/targets.tsv: no sentence for sample {key}")
                video = read_video(root / f"{key}.video")
                lmk = read_landmarks(root / f"{key}.lmk")
                if video.T != lmk.T:
                    raise CorpusFormatError(f"sample {key}: {video.T} video frames but {lmk.T} landmark frames")
                ws = tuple(sentences[key].split())
                out[name].append(StoredSample(key, name, video, lmk, ws, tuple(w in ambiguous for w in ws)))
        start += size
    return StoredCorpus(config, words, pairs, **out)
