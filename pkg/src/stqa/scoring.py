"""Candidate scoring, score ensembling, the LSEP ranking loss and prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import as_tensor
from .errors import ContractError, DimensionError
from .text import bilstm
from . import params as P

CHANNELS = ("text", "spt", "tpr")


def init_scorer(rng: np.random.Generator, width: int, prefix: str) -> P.Params:
    return {
        f"{prefix}.weight": P.uniform(rng, (width, 1), width, f"{prefix}.weight"),
        f"{prefix}.bias": P.zeros((1,), f"{prefix}.bias"),
    }


def _linear_max(seq: Tensor, weight, bias) -> Tensor:
    if seq.shape[-2] == 0:
        raise ContractError("scoring needs at least one timestep")
    weight = as_tensor(weight)
    if seq.shape[-1] != weight.shape[0]:
        raise DimensionError(f"scorer expects width {weight.shape[0]}, got {seq.shape[-1]}")
    per_step = ops.add(ops.matmul(seq, weight), bias)
    return ops.max(ops.reshape(per_step, per_step.shape[:-1]), axis=-1)


def score_visual(m, weight, bias) -> Tensor:
    """Per-timestep linear map to one value, then max over time.

    ``m`` is ``[..., n, 5D]``; returns ``[...]`` (one score per candidate).
    """
    return _linear_max(as_tensor(m), weight, bias)


def score_textual(m, p, lstm_prefix: str, weight, bias) -> Tensor:
    """Second bidirectional LSTM over the fused sequence, then linear + max."""
    m = as_tensor(m)
    if m.shape[-2] == 0:
        raise ContractError("scoring needs at least one timestep")
    return _linear_max(bilstm(m, p, lstm_prefix), weight, bias)


# --------------------------------------------------------------------------
# ensembling


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


@dataclass
class ChannelScores:
    """Raw candidate scores ``[..., K]`` of one channel (``text``, ``spt`` or ``tpr``)."""

    channel: str
    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim < 1 or self.p.shape[-1] < 1:
            raise DimensionError("channel scores need a candidate axis")

    @property
    def k(self) -> int:
        return self.p.shape[-1]


@dataclass
class EnsembleScores:
    final: np.ndarray
    normalized: dict = field(default_factory=dict)


def ensemble(channels: Sequence[ChannelScores], enabled: Optional[Iterable[str]] = None) -> EnsembleScores:
    """Softmax each enabled channel over candidates and sum the results."""
    if enabled is not None:
        keep = set(enabled)
        channels = [c for c in channels if c.channel in keep]
    if not channels:
        raise ContractError("ensemble needs at least one enabled channel")
    shape = channels[0].p.shape
    for c in channels:
        if c.p.shape != shape:
            raise DimensionError(f"channel {c.channel} scores {c.p.shape} != {shape}")
    normalized = {}
    final = np.zeros(shape)
    for c in channels:
        if c.channel in normalized:
            raise ContractError(f"channel {c.channel} given twice")
        q = softmax_np(c.p)
        normalized[c.channel] = q
        final = final + q
    return EnsembleScores(final=final, normalized=normalized)


def predict(scores) -> np.ndarray:
    """Argmax over candidates; ties go to the lowest index."""
    final = scores.final if isinstance(scores, EnsembleScores) else np.asarray(scores)
    return np.argmax(final, axis=-1)


# --------------------------------------------------------------------------
# loss


def _check_correct_set(correct, k: int) -> np.ndarray:
    y = np.unique(np.atleast_1d(np.asarray(correct, dtype=np.int64)))
    if y.size == 0:
        raise ContractError("LSEP needs at least one correct candidate")
    if y.size >= k:
        raise ContractError("LSEP needs at least one wrong candidate")
    if y.min() < 0 or y.max() >= k:
        raise ContractError(f"correct indices {y.tolist()} outside [0, {k})")
    return y


def lsep_loss(p, correct) -> Tensor:
    """``log(1 + sum_{v not in Y} sum_{u in Y} exp(p_v - p_u))`` on raw scores.

    ``correct`` is an index or a collection of indices (the set ``Y``).
    Evaluated as a log-sum-exp over ``[0, p_v - p_u ...]`` for stability.
    """
    p = as_tensor(p)
    if p.ndim != 1:
        raise DimensionError(f"lsep_loss expects a [K] score vector, got {p.shape}")
    k = p.shape[0]
    y = _check_correct_set(correct, k)
    wrong = np.setdiff1d(np.arange(k), y)
    vv, uu = np.meshgrid(wrong, y, indexing="ij")
    diffs = ops.sub(ops.getitem(p, vv.ravel()), ops.getitem(p, uu.ravel()))
    return ops.logsumexp(ops.concat([Tensor(np.zeros(1)), diffs], axis=0), axis=0)
