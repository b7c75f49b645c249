"""
Reverse-mode differentiation over float64 numpy arrays.

A Node holds a value, the nodes it was computed from and a closure mapping the
upstream gradient to one gradient per parent. Params are leaf nodes whose
gradients accumulate in `grad` across backward passes until `zero_grad`.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from typing import Optional

import numpy as np
import numpy.typing as npt

from ..errors import NumericalError
from ..types import FloatArray

BackwardFn = Callable[[FloatArray], Sequence[Optional[FloatArray]]]


class Node:
    __slots__ = ("value", "parents", "backward_fn", "requires_grad")

    def __init__(
        self,
        value: npt.ArrayLike,
        parents: Sequence[Node] = (),
        backward_fn: Optional[BackwardFn] = None,
    ) -> None:
        self.value: FloatArray = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = any(p.requires_grad for p in self.parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    def __repr__(self) -> str:
        return f"Node(shape={self.shape})"


class Param(Node):
    __slots__ = ("name", "grad")

    def __init__(self, name: str, value: npt.ArrayLike) -> None:
        super().__init__(np.array(value, dtype=np.float64))
        self.name = name
        self.requires_grad = True
        self.grad: FloatArray = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def constant(value: npt.ArrayLike) -> Node:
    return Node(value)


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node, grad: Optional[npt.ArrayLike] = None) -> None:
    """
    Propagate d(root)/d(node) to every Param reachable from root. `grad` seeds the
    upstream gradient (default ones, i.e. root is treated as a sum).
    """
    seed = np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=np.float64)
    if seed.shape != root.value.shape:
        raise ValueError(f"seed gradient shape {seed.shape} != root shape {root.value.shape}")
    if not np.all(np.isfinite(seed)):
        raise NumericalError("non-finite upstream gradient")
    if not root.requires_grad:
        return

    grads: dict[int, FloatArray] = {id(root): seed}
    for node in reversed(_topological(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            node.grad = node.grad + g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
