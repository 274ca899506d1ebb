"""Dense tensor with a recorded computation tape for reverse-mode gradients.

A ``Tensor`` wraps a numpy array. Operations in :mod:`lithocnn.engine.ops`
record parent links and a backward closure on their results; calling
``backward()`` on a scalar loss replays the tape in reverse topological order
and accumulates gradients into ``.grad`` of every tensor that requires them.

Activations and parameters are float32 by convention; the gradient-check
harness runs the identical graph in float64 simply by feeding float64 arrays.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import StateError

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape recording (inference fast path)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None):
        """Run reverse-mode accumulation from this tensor.

        Without an explicit seed gradient the tensor must be scalar. Raises
        ``StateError`` when no forward computation was recorded.
        """
        if self._backward is None and not self._parents:
            raise StateError("backward() called on a tensor with no recorded forward computation")
        if grad is None:
            if self.size != 1:
                raise StateError("backward() without an explicit gradient requires a scalar root")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        order = _toposort(self)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Tape bookkeeping used by ops ------------------------------------------------

    @staticmethod
    def _result(data, parents: Sequence["Tensor"], backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.asarray(g)
        else:
            self.grad = self.grad + g


def _toposort(root: Tensor) -> list:
    order, visited, stack = [], set(), [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order
