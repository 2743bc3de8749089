"""Adam and momentum SGD with step-wise exponential learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr0: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    decay_rate: float = 0.9
    decay_every: int = 5

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.lr0 > 0:
            raise ConfigError("lr0 must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError("decay_rate must lie in (0, 1]")
        if self.decay_every < 1:
            raise ConfigError("decay_every must be at least 1")
        if self.eps <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError("eps must be positive and momentum in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    def lr(self, epoch: int) -> float:
        return lr_schedule(self.lr0, self.decay_rate, self.decay_every, epoch)


def lr_schedule(lr0: float, decay_rate: float, decay_every: int, epoch: int) -> float:
    """``lr0 * decay_rate ** floor(epoch / decay_every)``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return lr0 * decay_rate ** (epoch // decay_every)


def _grad_of(name: str, p: Tensor, grads: Optional[Mapping[str, np.ndarray]]) -> np.ndarray:
    g = p.grad if grads is None else grads[name]
    if g is None:
        return np.zeros_like(p.data)
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient for parameter {name!r}")
    return g


def adam_step(params: Mapping[str, Tensor], grads, state: dict, cfg: OptimizerConfig, lr: float) -> dict:
    """Bias-corrected Adam update, in place. ``grads=None`` reads ``p.grad``."""
    g_all = {name: _grad_of(name, p, grads) for name, p in params.items()}
    m = state.setdefault("m", {})
    v = state.setdefault("v", {})
    t = state["t"] = state.get("t", 0) + 1
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = g_all[name]
        mn = m.get(name)
        if mn is None:
            mn = m[name] = np.zeros_like(p.data)
            v[name] = np.zeros_like(p.data)
        mn *= cfg.beta1
        mn += (1.0 - cfg.beta1) * g
        vn = v[name]
        vn *= cfg.beta2
        vn += (1.0 - cfg.beta2) * g * g
        p.data = p.data - lr * (mn / c1) / (np.sqrt(vn / c2) + cfg.eps)
    return state


def sgd_step(params: Mapping[str, Tensor], grads, state: dict, cfg: OptimizerConfig, lr: float) -> dict:
    """Classical momentum: ``v <- m*v + g``; ``w <- w - lr*v``."""
    g_all = {name: _grad_of(name, p, grads) for name, p in params.items()}
    vel = state.setdefault("velocity", {})
    for name, p in params.items():
        vn = vel.get(name)
        vn = g_all[name].copy() if vn is None else cfg.momentum * vn + g_all[name]
        vel[name] = vn
        p.data = p.data - lr * vn
    return state


def step(params, grads, state: dict, cfg: OptimizerConfig, lr: float) -> dict:
    fn = adam_step if cfg.kind == "adam" else sgd_step
    return fn(params, grads, state, cfg, lr)


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Rescale ``p.grad`` in place so the global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values() if p.grad is not None))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int = 3):
        if patience < 1:
            raise ConfigError("patience must be at least 1")
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record ``score``; True means improved (caller should keep a snapshot)."""
        if score > self.best:
            self.best = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience
