"""Tensor value type and the gradient tape that records operations on it.

Operations executed while a :class:`GradientTape` is active, and whose
inputs require gradients, are appended to the tape together with a closure
mapping the output adjoint to input adjoints.  :meth:`GradientTape.backward`
replays those closures in reverse record order.  Outside a tape nothing is
recorded, which keeps inference and finite-difference evaluation cheap.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ContractError, DimensionError

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape() -> Optional["GradientTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-D float64 array that can take part in a recorded gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # arithmetic sugar; the implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    @property
    def T(self) -> "Tensor":
        from . import ops
        return ops.swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Entry:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple, backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Ordered record of executed operations.

    Use as a context manager::

        with GradientTape() as tape:
            loss = ops.sum(x * x)
        tape.backward(loss)
    """

    def __init__(self):
        self._entries: list[_Entry] = []

    def __enter__(self) -> "GradientTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse guard
            stack.remove(self)

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        self._entries.append(_Entry(out, inputs, backward))

    def leaves(self) -> list[Tensor]:
        """requires_grad tensors consumed on this tape but not produced by it."""
        produced = {id(e.out) for e in self._entries}
        seen: dict[int, Tensor] = {}
        for e in self._entries:
            for t in e.inputs:
                if t.requires_grad and id(t) not in produced and id(t) not in seen:
                    seen[id(t)] = t
        return list(seen.values())

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Populate ``.grad`` of every requires_grad leaf on the tape.

        Leaves (and any extra ``params``) the loss does not depend on receive
        zero gradients.  Existing gradients are overwritten, not accumulated.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(e.out) for e in self._entries}
        if id(loss) not in produced and not loss.requires_grad:
            raise ContractError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for e in reversed(self._entries):
            g = grads.pop(id(e.out), None)
            if g is None:
                continue
            in_grads = e.backward(g)
            for t, gi in zip(e.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        targets = {id(t): t for t in self.leaves()}
        for p in params:
            targets.setdefault(id(p), p)
        if id(loss) not in produced:
            targets.setdefault(id(loss), loss)
        for key, t in targets.items():
            g = grads.get(key)
            t.grad = np.zeros_like(t.data) if g is None else np.array(g, dtype=np.float64).reshape(t.shape)


def backward(loss: Tensor, tape: GradientTape, params: Sequence[Tensor] = ()) -> None:
    """Functional form of :meth:`GradientTape.backward`."""
    tape.backward(loss, params)


def record(out_data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` and register the op on the active tape if needed."""
    req = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, req)
    if req:
        tape = current_tape()
        if tape is not None:
            tape.record(out, inputs, backward_fn)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach it."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra < 0:
        raise DimensionError(f"cannot unbroadcast {grad.shape} to {shape}")
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad
