"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a ``numpy.ndarray`` and records the operations
applied to it.  Calling :meth:`Tensor.backward` on a scalar result walks
the recorded graph in reverse topological order and accumulates gradients
into every leaf that has ``requires_grad=True``.
"""
from __future__ import annotations

import numpy as np


class NumcoreError(Exception):
    """Base class for tensor-engine errors."""


class DimensionError(NumcoreError):
    """Shapes are incompatible for the requested operation."""


class DomainError(NumcoreError):
    """Input values are outside an operation's mathematical domain."""


class UsageError(NumcoreError):
    """The operation was called in an unsupported way."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Row-major float64 array participating in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient bookkeeping ------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def is_leaf(self) -> bool:
        return not self._prev

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root.

        Leaf gradients accumulate additively across repeated calls;
        internal-node gradients are recomputed per sweep.
        """
        if self.data.size != 1:
            raise UsageError(
                f"backward requires a scalar root, got shape {self.shape}"
            )
        order = _toposort(self)
        for node in order:
            if node._prev:
                node.grad = None
        if self._prev:
            self.grad = np.ones_like(self.data)
        else:
            seed = np.ones_like(self.data)
            self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node)()

    # -- operator sugar (implemented in ops.py, bound there) -----------
    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _as_tensor(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_as_tensor(other), self)

    def __neg__(self):
        from . import ops
        return ops.negate(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order topological sort (acyclic by construction)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def accumulate(t: Tensor, grad: np.ndarray) -> None:
    """Add ``grad`` into ``t.grad``, reducing over broadcast axes."""
    if not t.requires_grad:
        return
    grad = unbroadcast(np.asarray(grad, dtype=np.float64), t.data.shape)
    t.grad = grad if t.grad is None else t.grad + grad


def make_node(data: np.ndarray, inputs: tuple[Tensor, ...], backward_factory):
    """Create an output tensor; record the graph edge if grads are live.

    ``backward_factory(out)`` must return a zero-argument closure that
    reads ``out.grad`` and accumulates into the inputs.  The factory is
    stored unbound and invoked with the node at sweep time, so a node
    never holds a closure referencing itself: finished graphs are freed
    by reference counting alone instead of waiting for cycle collection.
    """
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out._prev = tuple(inputs)
        out._backward = backward_factory
    return out
