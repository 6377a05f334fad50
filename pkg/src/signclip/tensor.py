"""Small dense-tensor library with reverse-mode automatic differentiation.

Every value is a float64 numpy array. Operations record their parents and a
backward closure; :meth:`Tensor.backward` walks the recorded graph in reverse
topological order and accumulates gradients into the leaves.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """An operation was configured with invalid hyperparameters."""


class EmptySequenceError(ValueError):
    """A time reduction was asked to reduce zero frames."""


class DegenerateEmbeddingError(ValueError):
    """A vector with zero norm was passed where a direction is required."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Leaf gradients are accumulated (``+=``); call :meth:`zero_grad` on the
        parameters between steps.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    live = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = live
    if live:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    z = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: sigmoid, relu, tanh, add, sub, mul, scale."""
    table = {"sigmoid": sigmoid, "relu": relu, "tanh": tanh,
             "add": add, "sub": sub, "mul": mul, "scale": scale}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args, **kwargs)


# ------------------------------------------------------------------- linear

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


def conv1d(x, kernels) -> Tensor:
    """Same-padded cross-correlation along the last (time) axis.

    ``x`` is ``(..., d_in, T)`` and ``kernels`` is ``(d_out, d_in, k)`` with odd
    ``k``; the result is ``(..., d_out, T)``. Out-of-range taps read zeros.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 3:
        raise DimensionError(f"conv1d: kernels must be (d_out, d_in, k), got {kernels.shape}")
    d_out, d_in, k = kernels.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d: kernel width must be odd for same padding, got {k}")
    if x.ndim < 2 or x.shape[-2] != d_in:
        raise DimensionError(f"conv1d: input {x.shape} does not match kernels {kernels.shape}")
    T = x.shape[-1]
    pad = k // 2
    xd, wd = x.data, kernels.data
    xp = np.pad(xd, [(0, 0)] * (xd.ndim - 1) + [(pad, pad)])
    # (..., d_in, T, k) -> (..., T, d_in * k)
    cols = sliding_window_view(xp, k, axis=-1)
    cols = np.moveaxis(cols, -3, -2).reshape(*xd.shape[:-2], T, d_in * k)
    wmat = wd.reshape(d_out, d_in * k)
    out = np.swapaxes(cols @ wmat.T, -1, -2)

    def backward(g):
        gt = np.swapaxes(g, -1, -2)  # (..., T, d_out)
        gw = None
        gx = None
        if kernels.requires_grad:
            gw = (gt.reshape(-1, d_out).T @ cols.reshape(-1, d_in * k)).reshape(d_out, d_in, k)
        if x.requires_grad:
            gcols = (gt @ wmat).reshape(*xd.shape[:-2], T, d_in, k)
            gxp = np.zeros(xp.shape)
            for j in range(k):
                gxp[..., j:j + T] += np.swapaxes(gcols[..., j], -1, -2)
            gx = gxp[..., pad:pad + T]
        return gx, gw

    return _make(out, (x, kernels), backward)


# -------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def mean_pool_time(z: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Average over the time axis (second to last): ``(..., T, d) -> (..., d)``.

    With a ``(..., T)`` validity mask only valid frames are averaged.
    """
    T = z.shape[-2]
    if T == 0:
        raise EmptySequenceError("cannot pool an empty sequence")
    if mask is None:
        return mean(z, axis=-2)
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise EmptySequenceError("a sequence has no valid frames")
    weights = (mask / counts)[..., None]
    return sum_(mul(z, weights), axis=-2)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def concat_features(a: Tensor, b: Tensor) -> Tensor:
    """``(T, p)`` and ``(T, q)`` to ``(T, p + q)``; time lengths must agree."""
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_features: time/batch axes differ, {a.shape} vs {b.shape}")
    return concat([a, b], axis=-1)


def reduce(op: str, *args, **kwargs) -> Tensor:
    table = {"mean_pool_time": mean_pool_time, "sum": sum_, "concat_features": concat_features}
    if op not in table:
        raise ValueError(f"unknown reduction {op!r}")
    return table[op](*args, **kwargs)


# ------------------------------------------------------------------- shape

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` with scatter-add gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (out,)

    return _make(table.data[ids], (table,), backward)


# ---------------------------------------------------------------- softmax

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def softmax_rows(a: Tensor) -> Tensor:
    return softmax(a, axis=-1)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    y = x - lse
    p = np.exp(y)
    return _make(y, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Unit-normalize along ``axis``; zero vectors are rejected, never nudged."""
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise DegenerateEmbeddingError("cannot normalize a zero-norm vector")
    y = a.data / norm
    return _make(y, (a,), lambda g: ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,))


# --------------------------------------------------------------- utilities

def parameters_checksum(tensors: Iterable[Tensor]) -> str:
    import hashlib

    h = hashlib.sha256()
    for t in tensors:
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()
