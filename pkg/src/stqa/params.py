"""Parameter dictionaries: seeded initialisation and bookkeeping helpers.

Models keep their weights in plain ``dict[str, Tensor]`` mappings whose keys
are dotted names (``"rgb.inc0.b1b.kernel"``).  Insertion order is the
canonical order used for checkpoints and optimizer state.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .autodiff import Tensor

Params = dict  # dict[str, Tensor]


def uniform(rng: np.random.Generator, shape, fan_in: int, name: str, gain: float = 1.0) -> Tensor:
    """``U[-gain/sqrt(fan_in), gain/sqrt(fan_in)]``."""
    bound = gain / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def count(params: Mapping[str, Tensor]) -> int:
    return int(sum(p.size for p in params.values()))


def snapshot(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def restore(params: Mapping[str, Tensor], values: Mapping[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data = np.array(values[k], dtype=np.float64).reshape(p.shape)


def subset(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {k: v for k, v in params.items() if k.startswith(prefix)}
