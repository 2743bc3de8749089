"""Differentiable primitives over :class:`~stqa.autodiff.tensor.Tensor`.

Every function takes tensors (or array-likes, promoted to constants) and
returns a new tensor; adjoints are registered on the active tape.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from ..errors import ContractError, DegenerateSliceError, DimensionError
from .tensor import Tensor, as_tensor, record, unbroadcast

Axes = Union[int, Sequence[int], None]

DEFAULT_LEAKY_SLOPE = 0.01


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# --------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return record(a.data + b.data, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return record(a.data - b.data, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return record(a.data * b.data, (a, b),
                  lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    return record(out, (a, b),
                  lambda g: (unbroadcast(g / b.data, a.shape),
                             unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


# --------------------------------------------------------------------------
# unary elementwise


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return record(np.log(a.data), (a,), lambda g: (g / a.data,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return record(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a, alpha: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, alpha)
    return record(a.data * slope, (a,), lambda g: (g * slope,))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "exp": exp, "log": log, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b=None, alpha: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    """Dispatch an elementwise op by name (``add``, ``mul``, ``leaky_relu`` ...)."""
    if kind in _BINARY:
        if b is None:
            raise ContractError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind == "leaky_relu":
        return leaky_relu(a, alpha)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ContractError(f"unknown elementwise kind {kind!r}")


# --------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} disagree") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else unbroadcast(ga, a.shape),
                None if gb is None else unbroadcast(gb, b.shape))

    return record(out, (a, b), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return record(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: {a.shape} -> {tuple(shape)} impossible") from None
    return record(np.array(out), (a,), lambda g: (unbroadcast(g, a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return record(np.array(a.data[index]), (a,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in ts]} disagree off axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return record(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"stack: shapes {[t.shape for t in ts]} differ") from None
    return record(out, ts, lambda g: tuple(np.moveaxis(g, axis, 0)))


def pad_rows(a, length: int, axis: int = 0) -> Tensor:
    """Zero-pad ``a`` along ``axis`` up to ``length``."""
    a = as_tensor(a)
    n = a.shape[axis]
    if n > length:
        raise DimensionError(f"pad_rows: extent {n} exceeds target {length}")
    if n == length:
        return a
    widths = [(0, 0)] * a.ndim
    widths[axis] = (0, length - n)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(0, n)
    sl = tuple(sl)
    return record(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


def take_rows(table, ids, frozen_rows: Sequence[int] = ()) -> Tensor:
    """Gather rows of a 2-D table; repeated ids accumulate gradient.

    Rows listed in ``frozen_rows`` never receive gradient.
    """
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-D table, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"row id out of range [0, {table.shape[0]})")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        if len(frozen_rows):
            full[list(frozen_rows)] = 0.0
        return (full,)

    return record(table.data[idx], (table,), bw)


# --------------------------------------------------------------------------
# reductions


def _norm_axes(axes: Axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} invalid for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(a, axes: Axes = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=ax, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a, axes: Axes = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in ax])) if ax else 1
    if count == 0:
        raise DimensionError("mean over an empty axis")
    out = a.data.sum(axis=ax, keepdims=keepdims) / count

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return record(np.asarray(out, dtype=np.float64), (a,), bw)


def max(a, axis: int = -1, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max over one axis; the gradient goes to the lowest-index maximiser."""
    a = as_tensor(a)
    (ax,) = _norm_axes(axis, a.ndim)
    if a.shape[ax] == 0:
        raise DimensionError("max over an empty axis")
    arg = np.argmax(a.data, axis=ax)
    out = np.take_along_axis(a.data, np.expand_dims(arg, ax), axis=ax)
    if not keepdims:
        out = np.squeeze(out, axis=ax)

    def bw(g):
        full = np.zeros_like(a.data)
        if not keepdims:
            g = np.expand_dims(g, ax)
        np.put_along_axis(full, np.expand_dims(arg, ax), g, axis=ax)
        return (full,)

    return record(out, (a,), bw)


def reduce(kind: str, a, axes: Axes = None) -> Tensor:
    """Dispatch ``max_over_axis``, ``mean_over_axes`` or ``sum``."""
    if kind == "max_over_axis":
        return max(a, axis=-1 if axes is None else axes)
    if kind == "mean_over_axes":
        return mean(a, axes)
    if kind == "sum":
        return sum(a, axes)
    raise ContractError(f"unknown reduction {kind!r}")


# --------------------------------------------------------------------------
# normalisation


def softmax_masked(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False are exactly 0.

    ``mask`` must broadcast to ``a``'s shape.  A slice with no unmasked entry
    raises :class:`DegenerateSliceError`.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        m = mask.data.astype(bool) if isinstance(mask, Tensor) else np.asarray(mask, dtype=bool)
        try:
            m = np.broadcast_to(m, x.shape)
        except ValueError:
            raise DimensionError(f"mask shape {m.shape} does not fit {x.shape}") from None
        if not np.all(m.any(axis=axis)):
            raise DegenerateSliceError("softmax slice is fully masked")
        x = np.where(m, x, -np.inf)
    if x.shape[axis] == 0:
        raise DegenerateSliceError("softmax over an empty axis")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (a,), bw)


def softmax(a, axis: int = -1) -> Tensor:
    return softmax_masked(a, axis=axis)


def logsumexp(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def bw(g):
        return (np.expand_dims(g, axis) * e / s,)

    return record(out, (a,), bw)
