"""Level adjustment, similarity-matrix context matching and joint embedding."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import as_tensor
from .errors import ContractError, DimensionError
from . import params as P


def init_level_adjust(rng: np.random.Generator, d_in: int, d_out: int, prefix: str) -> P.Params:
    return {
        f"{prefix}.weight": P.uniform(rng, (d_in, d_out), d_in, f"{prefix}.weight"),
        f"{prefix}.bias": P.zeros((d_out,), f"{prefix}.bias"),
    }


def level_adjust(x, weight, bias=None, alpha: float = ops.DEFAULT_LEAKY_SLOPE) -> Tensor:
    """``leaky_relu(x @ W + b)``; maps ``[..., n, Din]`` to ``[..., n, D]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"level_adjust: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    y = ops.matmul(x, weight)
    if bias is not None:
        y = ops.add(y, bias)
    return ops.leaky_relu(y, alpha)


def similarity(context, query, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-softmax of ``context @ query^T`` over the query axis.

    ``context`` is ``[n_ctx, D]``; ``query`` is ``[..., n_q, D]``; the result
    is ``[..., n_ctx, n_q]``.  ``mask`` (broadcastable, True = keep) hides
    padded query rows.
    """
    context, query = as_tensor(context), as_tensor(query)
    if context.shape[-1] != query.shape[-1]:
        raise DimensionError(f"context width {context.shape[-1]} != query width {query.shape[-1]}")
    if query.shape[-2] == 0:
        raise ContractError("context matching needs at least one query row")
    logits = ops.matmul(context, ops.swapaxes(query, -1, -2))
    return ops.softmax_masked(logits, axis=-1, mask=mask)


def context_match(context, query, mask: Optional[np.ndarray] = None, return_similarity: bool = False):
    """Context-aware query vectors ``G = S @ H'`` with one row per context step."""
    s = similarity(context, query, mask)
    g = ops.matmul(s, query)
    return (g, s) if return_similarity else g


def fuse(v, g_q, g_a) -> Tensor:
    """``[V; G_q; G_a; V*G_q; V*G_a]`` along the feature axis (width ``5D``)."""
    v, g_q, g_a = as_tensor(v), as_tensor(g_q), as_tensor(g_a)
    if not v.shape == g_q.shape == g_a.shape:
        raise DimensionError(f"fuse: shapes {v.shape}, {g_q.shape}, {g_a.shape} differ")
    return ops.concat([v, g_q, g_a, ops.mul(v, g_q), ops.mul(v, g_a)], axis=-1)


def fuse_candidates(v, g_q, g_a) -> Tensor:
    """Fuse shared ``[n, D]`` context and question blocks with ``[K, n, D]`` answers."""
    shape = g_a.shape
    return fuse(ops.broadcast_to(v, shape), ops.broadcast_to(g_q, shape), g_a)
