"""Multimodal contrastive fusion: spatial projection, gated fusion, temporal
convolution, global pooling and the InfoNCE alignment losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import DimensionError, Tensor


@dataclass
class FusionParams:
    spatial_projection: Tensor  # (2d, d), bias-free
    gate_w1: Tensor  # (2d, d)
    gate_b1: Tensor  # (d,)
    gate_w2: Tensor  # (d, d)
    gate_b2: Tensor  # (d,)
    temporal_kernels: Tensor  # (d, d, k)
    pool_spatial: Tensor  # (d, d) projection for z_s
    pool_mouth: Tensor  # (d, d) projection for z_m
    pool_visual: Tensor  # (d, d) projection for z_v
    temperature: float = 0.1

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @classmethod
    def create(cls, d_model: int, rng: np.random.Generator, kernel_width: int = 5,
               temperature: float = 0.1) -> "FusionParams":
        d = d_model

        def w(*shape, fan_in):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), requires_grad=True)

        kernels = rng.normal(0.0, 0.5 / math.sqrt(d * kernel_width), size=(d, d, kernel_width))
        kernels[np.arange(d), np.arange(d), kernel_width // 2] += 1.0
        return cls(
            spatial_projection=w(2 * d, d, fan_in=2 * d),
            gate_w1=w(2 * d, d, fan_in=2 * d),
            gate_b1=Tensor(np.zeros(d), requires_grad=True),
            gate_w2=w(d, d, fan_in=d),
            gate_b2=Tensor(np.zeros(d), requires_grad=True),
            temporal_kernels=Tensor(kernels, requires_grad=True),
            pool_spatial=w(d, d, fan_in=d),
            pool_mouth=w(d, d, fan_in=d),
            pool_visual=w(d, d, fan_in=d),
            temperature=temperature,
        )

    @property
    def d_model(self) -> int:
        return self.gate_w2.shape[0]

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            "fusion.spatial_projection": self.spatial_projection,
            "fusion.gate_w1": self.gate_w1,
            "fusion.gate_b1": self.gate_b1,
            "fusion.gate_w2": self.gate_w2,
            "fusion.gate_b2": self.gate_b2,
            "fusion.temporal_kernels": self.temporal_kernels,
            "fusion.pool_spatial": self.pool_spatial,
            "fusion.pool_mouth": self.pool_mouth,
            "fusion.pool_visual": self.pool_visual,
        }


def project_spatial(z_s: Tensor, params: FusionParams) -> Tensor:
    """Row-wise linear map from ``2d`` to ``d`` features."""
    if z_s.shape[-1] != params.spatial_projection.shape[0]:
        raise DimensionError(
            f"spatial features have width {z_s.shape[-1]}, projection expects {params.spatial_projection.shape[0]}")
    return tc.matmul(z_s, params.spatial_projection)


def gate(z_sp: Tensor, z_m: Tensor, params: FusionParams) -> Tensor:
    """``sigmoid(MLP([Z_s'; Z_m]))``, one gate entry per time step and feature."""
    hidden = tc.tanh(tc.add(tc.matmul(tc.concat_features(z_sp, z_m), params.gate_w1), params.gate_b1))
    return tc.sigmoid(tc.add(tc.matmul(hidden, params.gate_w2), params.gate_b2))


def gated_fuse(z_sp: Tensor, z_m: Tensor, params: FusionParams,
               forced_gate: float | None = None) -> tuple[Tensor, Tensor]:
    """Return ``(g * Z_s' + (1 - g) * Z_m, g)``.

    ``forced_gate`` pins every gate entry to a constant (1.0 = spatial only,
    0.0 = mouth only) and bypasses the gate MLP.
    """
    if z_sp.shape != z_m.shape:
        raise DimensionError(f"gated_fuse: Z_s' {z_sp.shape} and Z_m {z_m.shape} differ")
    if forced_gate is None:
        g = gate(z_sp, z_m, params)
    else:
        g = Tensor(np.full(z_sp.shape, float(forced_gate)))
    fused = tc.add(tc.mul(g, z_sp), tc.mul(tc.sub(1.0, g), z_m))
    return fused, g


def temporal_project(z_fused: Tensor, params: FusionParams, mask: np.ndarray | None = None) -> Tensor:
    """Same-padded 1-D convolution over time: ``(..., T, d) -> (..., T, d)``.

    Invalid (padding) frames are zeroed first so they behave like the
    convolution's own zero padding.
    """
    if mask is not None:
        z_fused = tc.mul(z_fused, np.asarray(mask, dtype=np.float64)[..., None])
    return tc.swapaxes(tc.conv1d(tc.swapaxes(z_fused, -1, -2), params.temporal_kernels), -1, -2)


def pool_global(z: Tensor, projection: Tensor | None = None, mask: np.ndarray | None = None) -> Tensor:
    """Masked time-mean, then an optional linear projection."""
    pooled = tc.mean_pool_time(z, mask)
    if projection is not None:
        if pooled.ndim == 1:
            return tc.reshape(tc.matmul(tc.reshape(pooled, (1, -1)), projection), (-1,))
        pooled = tc.matmul(pooled, projection)
    return pooled


def cosine_similarity_matrix(a: Tensor, b: Tensor) -> Tensor:
    return tc.matmul(tc.l2_normalize(a), tc.transpose(tc.l2_normalize(b)))


def infonce(anchors: Tensor, positives: Tensor, temperature: float) -> Tensor:
    """Mean cross-entropy of each anchor's cosine-similarity row against its own positive.

    Zero-norm embeddings raise :class:`~signclip.tensor.DegenerateEmbeddingError`.
    """
    if anchors.ndim != 2 or anchors.shape != positives.shape:
        raise DimensionError(f"infonce: anchors {anchors.shape} and positives {positives.shape} must be equal (N, d)")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    n = anchors.shape[0]
    logits = tc.scale(cosine_similarity_matrix(anchors, positives), 1.0 / temperature)
    diag = tc.sum_(tc.mul(tc.log_softmax(logits, axis=-1), np.eye(n)))
    return tc.scale(diag, -1.0 / n)
