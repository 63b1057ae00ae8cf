"""Tape-free reverse-mode autodiff: every Tensor remembers its parents."""
from __future__ import annotations

import contextlib
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .. import StateError


class Tensor:
    """An ndarray plus the information needed to push gradients back through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward: Optional[Callable[[np.ndarray], None]] = None, op: str = ""):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op!r})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf reachable from here.

        The graph is released afterwards; a second call raises StateError.
        """
        if not self.requires_grad:
            raise StateError("backward() on a tensor that does not require grad")
        if self._backward is None and self._parents == () and self.op == "released":
            raise StateError("graph already released; run forward again")
        if grad is None:
            if self.data.size != 1:
                raise StateError("backward() without an upstream gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topo(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # intermediate grads are not kept; leaves hold the result
                node.grad = None
                node._backward = None
                node._parents = ()
                node.op = "released"


def _topo(root: Tensor) -> List[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # grads are never mutated in place, so aliasing an upstream buffer is safe
        t.grad = g.astype(t.data.dtype, copy=False)
    else:
        t.grad = t.grad + g


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True, op="param")


def constant(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=False, op="const")


# --- verification hooks -----------------------------------------------------

# op name -> multiplier applied to that op's input/parameter gradients
_BACKWARD_SCALE: Dict[str, float] = {}
# set while a kink recorder is active; ops append activation patterns to it
_KINK_LOG: Optional[list] = None


def backward_scale(op: str) -> float:
    return _BACKWARD_SCALE.get(op, 1.0)


@contextlib.contextmanager
def corrupted_backward(op: str, factor: float = 1.5):
    """Deliberately break one op's backward rule (harness sanity test hook)."""
    old = _BACKWARD_SCALE.get(op)
    _BACKWARD_SCALE[op] = factor
    try:
        yield
    finally:
        if old is None:
            _BACKWARD_SCALE.pop(op, None)
        else:
            _BACKWARD_SCALE[op] = old


@contextlib.contextmanager
def record_kinks():
    """Collect the discrete branch choices (ReLU masks, pool argmaxes) of a forward pass."""
    global _KINK_LOG
    prev = _KINK_LOG
    _KINK_LOG = []
    try:
        yield _KINK_LOG
    finally:
        _KINK_LOG = prev


def log_kink(pattern: np.ndarray) -> None:
    if _KINK_LOG is not None:
        _KINK_LOG.append(pattern.copy())
