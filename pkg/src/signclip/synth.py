"""Deterministic synthetic sign corpus with gesture-ambiguous sign pairs.

Every sign has a gesture template (a moving Gaussian blob) and a mouth
template (a texture inside the mouth region). The two members of an ambiguous
pair share one gesture template exactly and differ only in their mouth texture.

Mouth textures are sums of period-4 stripe and checker patterns laid out on an
8-pixel-aligned grid. At the default geometry (32x32 frames, spatial base
resolution 16) every bilinear tap of the spatial stub averages such a texture
to zero, so the spatial stream cannot tell pair members apart while the
mouth crop still resolves them.

Randomness: numpy ``PCG64`` seeded by ``SeedSequence(seed, spawn_key=(stream, index))``.
Stream 0 draws the sign templates; streams 1, 2, 3 draw the train, valid and
test samples, one child sequence per sample index, so any sample can be
regenerated without generating the others.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .decoder import Vocabulary
from .encoders import FrameSequence, LandmarkStream, MOUTH_LANDMARKS

PRNG_DESCRIPTION = "numpy PCG64 via SeedSequence(seed, spawn_key=(stream, index)); streams: 0=templates 1=train 2=valid 3=test"

WORDS = (
    "rain", "sun", "wind", "snow", "cloud", "storm", "fog", "frost",
    "north", "south", "east", "west", "coast", "mountain", "river", "valley",
    "monday", "tuesday", "morning", "evening", "warm", "cold", "chair", "sit",
    "today", "tomorrow", "night", "day", "mild", "wet", "dry", "bright",
)

SPLITS = ("train", "valid", "test")
MIN_FRAME = 32
BACKGROUND = 0.35
FACE_LEVEL = 0.10
BLOB_AMPLITUDE = 0.30


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    n_signs: int = 24
    n_ambiguous_pairs: int = 6
    frames_per_sign: int = 4
    sentence_min: int = 3
    sentence_max: int = 6
    height: int = 32
    width: int = 32
    channels: int = 3
    landmark_sigma: float = 1.0
    pixel_noise: float = 0.08
    position_jitter: float = 1.5
    mouth_amplitude: float = 0.035
    n_train: int = 600
    n_valid: int = 100
    n_test: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.n_signs < 1 or self.n_ambiguous_pairs < 0:
            raise ConfigError("n_signs must be >= 1 and n_ambiguous_pairs >= 0")
        if 2 * self.n_ambiguous_pairs > self.n_signs:
            raise ConfigError(f"2*n_ambiguous_pairs={2 * self.n_ambiguous_pairs} exceeds n_signs={self.n_signs}")
        if self.height < MIN_FRAME or self.width < MIN_FRAME:
            raise ConfigError(f"frames must be at least {MIN_FRAME}x{MIN_FRAME}")
        if self.height % 8 or self.width % 8:
            raise ConfigError("frame height and width must be multiples of 8")
        if not 1 <= self.sentence_min <= self.sentence_max:
            raise ConfigError("need 1 <= sentence_min <= sentence_max")
        if self.frames_per_sign < 1 or self.channels < 1:
            raise ConfigError("frames_per_sign and channels must be >= 1")
        if min(self.n_train, self.n_valid, self.n_test) < 0 or self.n_train < 1:
            raise ConfigError("split sizes must be non-negative with n_train >= 1")
        if min(self.landmark_sigma, self.pixel_noise, self.position_jitter, self.mouth_amplitude) < 0:
            raise ConfigError("noise levels and amplitudes must be non-negative")

    @property
    def split_sizes(self) -> dict[str, int]:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}

    def words(self) -> list[str]:
        return [WORDS[i] if i < len(WORDS) else f"sign{i}" for i in range(self.n_signs)]


@dataclass(frozen=True)
class GestureTemplate:
    start: np.ndarray  # (x, y)
    end: np.ndarray
    width: float
    color: np.ndarray  # (C,)


@dataclass(frozen=True)
class SignInventory:
    words: list[str]
    gestures: list[GestureTemplate]  # indexed by sign id; pair members share an object
    mouths: np.ndarray  # (n_signs, n_blocks, 3) texture coefficients
    pairs: list[tuple[int, int]]

    def ambiguous(self, sign: int) -> bool:
        return any(sign in p for p in self.pairs)


@dataclass(frozen=True)
class SyntheticSample:
    index: int
    split: str
    video: FrameSequence
    landmarks: LandmarkStream
    signs: tuple[int, ...]
    words: tuple[str, ...]
    ambiguity_tags: tuple[bool, ...]


@dataclass(frozen=True)
class Corpus:
    config: SyntheticConfig
    inventory: SignInventory
    train: list[SyntheticSample] = field(default_factory=list)
    valid: list[SyntheticSample] = field(default_factory=list)
    test: list[SyntheticSample] = field(default_factory=list)

    def split(self, name: str) -> list[SyntheticSample]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_samples(self) -> list[SyntheticSample]:
        return self.train + self.valid + self.test


def stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, index))))


# ------------------------------------------------------------------ layout

def mouth_region(config: SyntheticConfig) -> tuple[int, int, int, int]:
    """Pixel rectangle ``(x0, y0, x1, y1)`` (end-exclusive) holding the mouth texture."""
    cx = (config.width // 2) // 8 * 8
    cy = (config.height // 2) // 8 * 8
    return cx - 8, cy, cx + 8, cy + 8


def face_landmarks(config: SyntheticConfig) -> np.ndarray:
    """Noise-free 68-point layout (iBUG ordering) around the mouth region."""
    x0, y0, x1, y1 = mouth_region(config)
    mx, my = (x0 + x1 - 1) / 2.0, (y0 + y1 - 1) / 2.0
    half_w, half_h = (x1 - x0) / 2.0, (y1 - y0) / 2.0
    pts = np.zeros((68, 2))
    # jaw 0-16
    a = np.linspace(np.pi, 0.0, 17)
    pts[0:17] = np.c_[mx + 1.6 * half_w * np.cos(a), my - 8 + 2.2 * half_h * np.sin(a) + 6]
    # brows 17-26
    pts[17:22] = np.c_[np.linspace(mx - 11, mx - 3, 5), np.full(5, my - 13.0)]
    pts[22:27] = np.c_[np.linspace(mx + 3, mx + 11, 5), np.full(5, my - 13.0)]
    # nose 27-35
    pts[27:31] = np.c_[np.full(4, mx), np.linspace(my - 11, my - 6, 4)]
    pts[31:36] = np.c_[np.linspace(mx - 2, mx + 2, 5), np.full(5, my - 5.0)]
    # eyes 36-47
    e = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    for base, ex in ((36, mx - 7), (42, mx + 7)):
        pts[base:base + 6] = np.c_[ex + 2.5 * np.cos(e), my - 10 + 1.0 * np.sin(e)]
    # outer lip 48-59, inner lip 60-67
    o = np.linspace(np.pi, -np.pi, 12, endpoint=False)
    pts[48:60] = np.c_[mx + half_w * np.cos(o), my - half_h * np.sin(o)]
    i = np.linspace(np.pi, -np.pi, 8, endpoint=False)
    pts[60:68] = np.c_[mx + 0.6 * half_w * np.cos(i), my - 0.35 * half_h * np.sin(i)]
    return pts


def _period4(n: int) -> np.ndarray:
    # +1 where coord mod 4 in {2, 3}, -1 where in {0, 1}
    return np.where((np.arange(n) % 4) >= 2, 1.0, -1.0)


def mouth_texture(coeffs: np.ndarray, config: SyntheticConfig) -> np.ndarray:
    """Full-frame ``(H, W)`` texture for one mouth template.

    ``coeffs`` is ``(n_blocks, 3)``: weights of the checker, horizontal-stripe
    and vertical-stripe patterns in each 8x8 block of the mouth region.
    """
    H, W = config.height, config.width
    qx, qy = _period4(W), _period4(H)
    checker = qy[:, None] * qx[None, :]
    hstripe = np.broadcast_to(qy[:, None], (H, W))
    vstripe = np.broadcast_to(qx[None, :], (H, W))
    tex = np.zeros((H, W))
    x0, y0, x1, y1 = mouth_region(config)
    for b, bx in enumerate(range(x0, x1, 8)):
        sl = (slice(y0, y1), slice(bx, bx + 8))
        c = coeffs[b]
        tex[sl] = c[0] * checker[sl] + c[1] * hstripe[sl] + c[2] * vstripe[sl]
    return tex


def _face_image(config: SyntheticConfig) -> np.ndarray:
    H, W = config.height, config.width
    x0, y0, x1, y1 = mouth_region(config)
    cx, cy = (x0 + x1 - 1) / 2.0, (y0 + y1 - 1) / 2.0 - 6
    yy, xx = np.mgrid[0:H, 0:W]
    face = ((xx - cx) / 13.0) ** 2 + ((yy - cy) / 15.0) ** 2 <= 1.0
    return BACKGROUND + FACE_LEVEL * face


# --------------------------------------------------------------- templates

def build_inventory(config: SyntheticConfig) -> SignInventory:
    config.validate()
    rng = stream_rng(config.seed, 0)
    n = config.n_signs
    order = rng.permutation(n)
    pairs = [(int(order[2 * k]), int(order[2 * k + 1])) for k in range(config.n_ambiguous_pairs)]
    margin = 5.0
    gestures: list[GestureTemplate | None] = [None] * n

    def fresh():
        return GestureTemplate(
            start=rng.uniform(margin, [config.width - margin, config.height - margin]),
            end=rng.uniform(margin, [config.width - margin, config.height - margin]),
            width=float(rng.uniform(2.0, 3.5)),
            color=rng.uniform(0.3, 1.0, size=config.channels),
        )

    for a, b in pairs:
        gestures[a] = gestures[b] = fresh()
    for s in range(n):
        if gestures[s] is None:
            gestures[s] = fresh()
    n_blocks = 2
    mouths = rng.uniform(-1.0, 1.0, size=(n, n_blocks, 3))
    # scale each template so its peak coefficient sum is 1
    mouths /= np.abs(mouths).sum(axis=-1, keepdims=True).max(axis=1, keepdims=True)
    return SignInventory(config.words(), gestures, mouths, pairs)


# --------------------------------------------------------------- rendering

def _envelope(k: int) -> np.ndarray:
    if k == 1:
        return np.ones(1)
    return 0.6 + 0.4 * np.sin(np.linspace(0.0, np.pi, k))


def render_sign(sign: int, inventory: SignInventory, config: SyntheticConfig,
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Frames ``(k, H, W, C)`` and landmarks ``(k, 68, 2)`` for one sign occurrence.

    With ``rng=None`` the rendering is noise-free.
    """
    k = config.frames_per_sign
    H, W, C = config.height, config.width, config.channels
    g = inventory.gestures[sign]
    yy, xx = np.mgrid[0:H, 0:W]
    face = _face_image(config)
    tex = mouth_texture(inventory.mouths[sign], config) * config.mouth_amplitude
    env = _envelope(k)
    base_lmk = face_landmarks(config)
    frames = np.empty((k, H, W, C))
    lmks = np.empty((k, 68, 2))
    for f in range(k):
        u = f / (k - 1) if k > 1 else 0.0
        pos = (1 - u) * g.start + u * g.end
        if rng is not None and config.position_jitter > 0:
            pos = pos + rng.normal(0.0, config.position_jitter, size=2)
        blob = BLOB_AMPLITUDE * np.exp(-((xx - pos[0]) ** 2 + (yy - pos[1]) ** 2) / (2 * g.width ** 2))
        img = (face + env[f] * tex)[..., None] + blob[..., None] * g.color
        lm = base_lmk.copy()
        if rng is not None:
            if config.pixel_noise > 0:
                img = img + rng.normal(0.0, config.pixel_noise, size=img.shape)
            if config.landmark_sigma > 0:
                lm = lm + rng.normal(0.0, config.landmark_sigma, size=lm.shape)
        frames[f] = np.clip(img, 0.0, 1.0)
        lmks[f] = lm
    return frames, lmks


def generate_sample(config: SyntheticConfig, inventory: SignInventory, split: str, index: int) -> SyntheticSample:
    rng = stream_rng(config.seed, 1 + SPLITS.index(split), index)
    length = int(rng.integers(config.sentence_min, config.sentence_max + 1))
    signs = tuple(int(s) for s in rng.integers(0, config.n_signs, size=length))
    parts = [render_sign(s, inventory, config, rng) for s in signs]
    video = FrameSequence(np.concatenate([p[0] for p in parts]))
    landmarks = LandmarkStream(np.concatenate([p[1] for p in parts]))
    return SyntheticSample(
        index=index, split=split, video=video, landmarks=landmarks, signs=signs,
        words=tuple(inventory.words[s] for s in signs),
        ambiguity_tags=tuple(inventory.ambiguous(s) for s in signs),
    )


def generate_corpus(config: SyntheticConfig) -> Corpus:
    inventory = build_inventory(config)
    splits = {name: [generate_sample(config, inventory, name, i) for i in range(size)]
              for name, size in config.split_sizes.items()}
    return Corpus(config, inventory, **splits)


def build_vocabulary(corpus: Corpus) -> Vocabulary:
    if not corpus.train:
        raise ValueError("cannot build a vocabulary from an empty train split")
    seen: dict[str, None] = {}
    for sample in corpus.train:
        for w in sample.words:
            seen.setdefault(w, None)
    return Vocabulary(list(seen))


def config_items(config: SyntheticConfig) -> list[tuple[str, object]]:
    return list(asdict(config).items())


def config_from_mapping(values: dict) -> SyntheticConfig:
    known = {f.name: f.type for f in fields(SyntheticConfig)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
    defaults = SyntheticConfig()
    kwargs = {k: type(getattr(defaults, k))(v) for k, v in values.items()}
    return SyntheticConfig(**kwargs)


def mouth_landmark_indices() -> np.ndarray:
    return MOUTH_LANDMARKS.copy()


# ----------------------------------------------------------------- batching

@dataclass(frozen=True)
class EncodedSample:
    """A sample after the frozen encoders: features plus its target words."""

    z_s: np.ndarray  # (T, 2d)
    z_m: np.ndarray  # (T, d)
    words: tuple[str, ...]
    ambiguity_tags: tuple[bool, ...] = ()
    key: str = ""


@dataclass(frozen=True)
class Batch:
    z_s: np.ndarray  # (N, T_max, 2d)
    z_m: np.ndarray  # (N, T_max, d)
    mask: np.ndarray  # (N, T_max) bool, True on real frames
    decoder_input: np.ndarray  # (N, U) <bos> w1 .. wL <pad>...
    targets: np.ndarray  # (N, U) w1 .. wL <eos> <pad>...
    references: tuple[tuple[str, ...], ...]

    @property
    def size(self) -> int:
        return self.z_s.shape[0]


def _pad_repeat(x: np.ndarray, length: int) -> np.ndarray:
    if x.shape[0] == length:
        return x
    return np.concatenate([x, np.repeat(x[-1:], length - x.shape[0], axis=0)])


def collate(samples, vocab: Vocabulary) -> Batch:
    """Stack samples: frames padded by repeating the last frame, targets right-padded with <pad>."""
    from .decoder import BOS, EOS, PAD

    if not samples:
        raise ValueError("cannot collate an empty batch")
    T = max(s.z_s.shape[0] for s in samples)
    ids = [vocab.encode(s.words) for s in samples]
    U = max(len(i) for i in ids) + 1
    dec_in = np.full((len(samples), U), PAD, dtype=np.int64)
    tgt = np.full((len(samples), U), PAD, dtype=np.int64)
    mask = np.zeros((len(samples), T), dtype=bool)
    for r, (s, seq) in enumerate(zip(samples, ids)):
        dec_in[r, :len(seq) + 1] = [BOS] + seq
        tgt[r, :len(seq) + 1] = seq + [EOS]
        mask[r, :s.z_s.shape[0]] = True
    return Batch(
        z_s=np.stack([_pad_repeat(s.z_s, T) for s in samples]),
        z_m=np.stack([_pad_repeat(s.z_m, T) for s in samples]),
        mask=mask, decoder_input=dec_in, targets=tgt,
        references=tuple(tuple(s.words) for s in samples),
    )


def iter_batches(samples, batch_size: int, vocab: Vocabulary, rng: np.random.Generator | None = None):
    """Yield collated batches of at most ``batch_size``; shuffled when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        yield collate([samples[i] for i in order[start:start + batch_size]], vocab)
