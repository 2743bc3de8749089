"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericError
from .tensor import GradientTape, Tensor


def _scalar(value) -> float:
    v = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if v.size != 1:
        raise ContractError(f"gradient check needs a scalar function, got shape {v.shape}")
    v = float(v.reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError("function evaluation is not finite")
    return v


def analytic_grads(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.requires_grad = True
    with GradientTape() as tape:
        out = f()
    _scalar(out)
    tape.backward(out, params)
    return [p.grad.copy() for p in params]


def numeric_grads(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences, perturbing each entry of each parameter in place."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar(f())
            flat[i] = orig - eps
            fm = _scalar(f())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


# Central differences at eps=1e-5 carry ~1e-11 of round-off on an O(1)
# function, so gradients below this scale are compared absolutely.
DEFAULT_FLOOR = 1e-6


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(floor, np.abs(analytic) + np.abs(numeric))


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      floor: float = DEFAULT_FLOOR) -> float:
    """Max relative error between tape and central-difference gradients.

    ``f`` is called with no arguments and must read the current values of
    ``params``; it is evaluated ``2 * total_size + 1`` times.  Entries whose
    gradients are both below ``floor`` in magnitude are judged on absolute
    difference scaled by ``1 / floor``.
    """
    params = list(params)
    ana = analytic_grads(f, params)
    num = numeric_grads(f, params, eps)
    worst = 0.0
    for a, n in zip(ana, num):
        if a.size:
            worst = max(worst, float(relative_errors(a, n, floor).max()))
    return worst
