"""Frozen visual front-end: multi-scale spatial encoding and mouth-region encoding.

The pretrained backbones are replaced by :class:`StubEncoder`, a frozen random
linear projection of a bilinearly downsampled view. Coordinates follow the
pixel-index convention: pixel ``(row i, col j)`` has its centre at ``(x=j, y=i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MOUTH_LANDMARKS = np.arange(48, 68)
N_LANDMARKS = 68


class ResizeError(ValueError):
    pass


class AlignmentError(ValueError):
    """Frames and landmarks disagree on the number of frames."""


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray  # (T, H, W, C), values in [0, 1]
    frame_rate: float | None = None

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be (T>=1, H, W, C), got {self.frames.shape}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class LandmarkStream:
    points: np.ndarray  # (T, 68, 2) as (x, y) pixel coordinates

    def __post_init__(self):
        p = self.points
        if p.ndim != 3 or p.shape[1:] != (N_LANDMARKS, 2):
            raise ValueError(f"landmarks must be (T, 68, 2), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("landmark coordinates must be finite")

    @property
    def T(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class MouthClip:
    frames: np.ndarray  # (T, h_m, w_m, C)
    crop_boxes: np.ndarray  # (T, 4) as (x0, y0, x1, y1)


FEATURE_TAGS = ("spatial_2d", "spatial_d", "mouth_d", "fused_d", "conv_d")


@dataclass(frozen=True)
class FeatureSequence:
    values: np.ndarray  # (T, width)
    stream_tag: str

    def __post_init__(self):
        if self.stream_tag not in FEATURE_TAGS:
            raise ValueError(f"unknown stream tag {self.stream_tag!r}")
        if self.values.ndim != 2:
            raise ValueError(f"feature sequence must be 2-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature sequence contains NaN/Inf")


# ---------------------------------------------------------------- sampling

def _axis_taps(n_in: int, coords: np.ndarray):
    c = np.clip(coords, 0.0, n_in - 1)
    i0 = np.floor(c).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, c - i0


def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``(..., H, W, C)`` at the grid ``ys x xs`` (pixel-centre coordinates)."""
    H, W = img.shape[-3], img.shape[-2]
    y0, y1, wy = _axis_taps(H, ys)
    x0, x1, wx = _axis_taps(W, xs)
    wx = wx[:, None]
    wy = wy[:, None, None]
    rows0 = img[..., y0, :, :]
    rows1 = img[..., y1, :, :]
    top = rows0[..., x0, :] * (1.0 - wx) + rows0[..., x1, :] * wx
    bot = rows1[..., x0, :] * (1.0 - wx) + rows1[..., x1, :] * wx
    return top * (1.0 - wy) + bot * wy


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the last three axes ``(H, W, C)`` with half-pixel-centre bilinear taps."""
    H, W = img.shape[-3], img.shape[-2]
    if H < 2 or W < 2:
        raise ResizeError(f"frame {H}x{W} is smaller than 2x2")
    ys = (np.arange(out_h) + 0.5) * (H / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (W / out_w) - 0.5
    return sample_bilinear(img, ys, xs)


def crop_resize(img: np.ndarray, box, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resample the box ``(x0, y0, x1, y1)`` of ``img`` to ``out_h x out_w``."""
    x0, y0, x1, y1 = box
    xs = x0 + (np.arange(out_w) + 0.5) * ((x1 - x0) / out_w)
    ys = y0 + (np.arange(out_h) + 0.5) * ((y1 - y0) / out_h)
    return sample_bilinear(img, ys, xs)


# ------------------------------------------------------------- mouth crop

def mouth_box(points: np.ndarray, margin: float) -> tuple[float, float, float, float]:
    """Unclamped box around landmarks 48-67, padded by ``margin * max(w, h)``."""
    mouth = points[MOUTH_LANDMARKS]
    x0, y0 = mouth.min(axis=0)
    x1, y1 = mouth.max(axis=0)
    pad = margin * max(x1 - x0, y1 - y0)
    return (float(x0 - pad), float(y0 - pad), float(x1 + pad), float(y1 + pad))


def clamp_box(box, width: int, height: int):
    x0, y0, x1, y1 = box
    cx = lambda v: min(max(v, 0.0), width - 1.0)  # noqa: E731
    cy = lambda v: min(max(v, 0.0), height - 1.0)  # noqa: E731
    return (cx(x0), cy(y0), cx(x1), cy(y1))


def crop_mouth_region(video: FrameSequence, landmarks: LandmarkStream, margin: float = 0.10,
                      out_hw: tuple[int, int] = (16, 24)) -> MouthClip:
    if video.T != landmarks.T:
        raise AlignmentError(f"video has {video.T} frames but landmarks have {landmarks.T}")
    if not 0.0 <= margin <= 0.5:
        raise ValueError(f"margin must lie in [0, 0.5], got {margin}")
    _, H, W, _ = video.frames.shape
    h_m, w_m = out_hw
    boxes = np.zeros((video.T, 4))
    crops = []
    prev = None
    for t in range(video.T):
        box = clamp_box(mouth_box(landmarks.points[t], margin), W, H)
        if box[2] <= box[0] or box[3] <= box[1]:
            if prev is None:
                raise ValueError("degenerate mouth box on frame 0")
            box = prev
        boxes[t] = box
        crops.append(crop_resize(video.frames[t], box, h_m, w_m))
        prev = box
    return MouthClip(frames=np.stack(crops), crop_boxes=boxes)


# ----------------------------------------------------------- stub encoder

@dataclass
class StubEncoder:
    """Frozen stand-in for a pretrained image encoder.

    Maps an ``input_hw`` view to ``d_model`` features by bilinear downsampling
    to ``grid_hw`` and a bias-free random projection.
    """

    weights: np.ndarray  # (grid_h * grid_w * C, d_model)
    input_hw: tuple[int, int]
    grid_hw: tuple[int, int]
    channels: int
    frozen: bool = field(default=True)

    def __post_init__(self):
        expected = self.grid_hw[0] * self.grid_hw[1] * self.channels
        if self.weights.shape[0] != expected:
            raise ValueError(f"weights have {self.weights.shape[0]} rows, expected {expected}")
        if self.frozen:
            self.weights.setflags(write=False)

    @classmethod
    def random(cls, seed: int, input_hw, grid_hw, channels: int, d_model: int) -> "StubEncoder":
        rng = np.random.Generator(np.random.PCG64(seed))
        fan_in = grid_hw[0] * grid_hw[1] * channels
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, d_model))
        return cls(w, tuple(input_hw), tuple(grid_hw), channels)

    @property
    def d_model(self) -> int:
        return self.weights.shape[1]

    def __call__(self, views: np.ndarray) -> np.ndarray:
        if views.shape[-3:-1] != self.input_hw:
            raise ResizeError(f"encoder expects {self.input_hw} views, got {views.shape[-3:-1]}")
        small = resize_bilinear(views, *self.grid_hw)
        flat = small.reshape(*small.shape[:-3], -1)
        # einsum keeps each row's reduction order independent of the batch size
        return np.einsum("...i,ij->...j", flat, self.weights)


# ------------------------------------------------------------ S^2 spatial

def s2_views(frame: np.ndarray, base_res: int) -> np.ndarray:
    """The five views of one frame: the base resize and the four 2r quadrants.

    Works on ``(..., H, W, C)`` and returns ``(..., 5, r, r, C)``.
    """
    r = base_res
    base = resize_bilinear(frame, r, r)
    big = resize_bilinear(frame, 2 * r, 2 * r)
    quads = [big[..., :r, :r, :], big[..., :r, r:, :], big[..., r:, :r, :], big[..., r:, r:, :]]
    return np.stack([base] + quads, axis=-4)


def s2_encode_frame(frame: np.ndarray, encoder: StubEncoder) -> np.ndarray:
    """``concat(f(base), mean_k f(patch_k))``: a ``2 * d_model`` vector."""
    r = encoder.input_hw[0]
    emb = encoder(s2_views(frame, r))
    pooled = (emb[..., 1, :] + emb[..., 2, :] + emb[..., 3, :] + emb[..., 4, :]) / 4.0
    return np.concatenate([emb[..., 0, :], pooled], axis=-1)


def encode_spatial_sequence(video: FrameSequence, encoder: StubEncoder) -> FeatureSequence:
    try:
        values = s2_encode_frame(video.frames, encoder)
    except ResizeError as exc:
        # every frame shares a shape, so the first frame is the failing one
        raise ResizeError(f"frame 0: {exc}") from exc
    return FeatureSequence(values, "spatial_2d")


def encode_mouth_sequence(clip: MouthClip, encoder: StubEncoder) -> FeatureSequence:
    if clip.frames.shape[0] < 1:
        raise ValueError("mouth clip has no frames")
    return FeatureSequence(encoder(clip.frames), "mouth_d")
