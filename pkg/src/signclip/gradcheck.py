"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(fn().data)
        flat[i] = orig - eps
        down = float(fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
              rtol: float = 1e-4, atol: float = 1e-7) -> tuple[bool, float]:
    """Compare analytic and numerical gradients of a scalar ``fn`` w.r.t. ``inputs``.

    An entry passes when ``|analytic - numeric| <= max(atol, rtol * max(|analytic|, |numeric|))``.
    Returns ``(ok, worst)`` where ``worst`` is the largest violation ratio
    (values <= 1 pass).
    """
    for t in inputs:
        t.zero_grad()
    fn().backward()
    analytic = [t.grad.copy() for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        n = numerical_grad(fn, t, eps)
        bound = np.maximum(atol, rtol * np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / bound)) if a.size else 0.0)
    return worst <= 1.0, worst
