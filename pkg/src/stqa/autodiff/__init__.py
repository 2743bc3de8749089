"""Reverse-mode automatic differentiation over float64 numpy arrays."""

from . import ops
from .gradcheck import analytic_grads, finite_diff_check, numeric_grads, relative_errors
from .tensor import GradientTape, Tensor, as_tensor, backward, current_tape

__all__ = [
    "GradientTape",
    "Tensor",
    "analytic_grads",
    "as_tensor",
    "backward",
    "current_tape",
    "finite_diff_check",
    "numeric_grads",
    "ops",
    "relative_errors",
]
