#
# Differentiable operations. Every op takes Nodes, returns a Node and records the
# gradient rule for its inputs. Shapes:
#
#   dense    x (B, in), weight (out, in), bias (out,)      -> (B, out)
#   embed    ids (B,), table (rows, D)                      -> (B, D)
#   conv1d   x (B, L, Cin), kernel (K, Cin, Cout), bias (Cout,) -> (B, L, Cout)
#
# conv1d is a cross-correlation with zero "same" padding; K must be odd.
#

from __future__ import annotations

import math
from collections.abc import Sequence
from typing import Optional, Union

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, ndtr

from ..errors import DataError
from ..types import FloatArray
from .tensor import Node, constant

Operand = Union[Node, float, npt.NDArray[np.float64]]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _node(x: Operand) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(g: FloatArray, shape: tuple[int, ...]) -> FloatArray:
    """Sum g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def dense(x: Node, weight: Node, bias: Optional[Node] = None) -> Node:
    if x.value.ndim != 2 or weight.value.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"dense: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    y = x.value @ weight.value.T
    if bias is not None:
        y = y + bias.value

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        out: list[Optional[FloatArray]] = [g @ weight.value, g.T @ x.value]
        if bias is not None:
            out.append(g.sum(axis=0))
        return out

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Node(y, parents, back)


def embed(ids: npt.ArrayLike, table: Node) -> Node:
    idx = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if idx.ndim != 1:
        raise ValueError("embed: ids must be one-dimensional")
    if len(idx) and (idx.min() < 0 or idx.max() >= rows):
        raise DataError(
            f"embedding id outside [0, {rows}) (saw {int(idx.min())}..{int(idx.max())})"
        )

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        acc = np.zeros_like(table.value)
        np.add.at(acc, idx, g)
        return [acc]

    return Node(table.value[idx], (table,), back)


def conv1d(x: Node, kernel: Node, bias: Optional[Node] = None) -> Node:
    if x.value.ndim != 3 or kernel.value.ndim != 3:
        raise ValueError("conv1d: expected x (B, L, Cin) and kernel (K, Cin, Cout)")
    k, cin, _ = kernel.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d: kernel length must be odd, got {k}")
    if x.shape[2] != cin:
        raise ValueError(f"conv1d: {x.shape[2]} input channels, kernel expects {cin}")
    pad = k // 2
    length = x.shape[1]
    xp = np.pad(x.value, ((0, 0), (pad, pad), (0, 0)))
    windows = sliding_window_view(xp, k, axis=1)  # (B, L, Cin, K)
    y = np.einsum("blct,tco->blo", windows, kernel.value)
    if bias is not None:
        y = y + bias.value

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        dk = np.einsum("blct,blo->tco", windows, g)
        dxp = np.zeros_like(xp)
        for t in range(k):
            dxp[:, t : t + length, :] += g @ kernel.value[t].T
        out: list[Optional[FloatArray]] = [dxp[:, pad : pad + length, :], dk]
        if bias is not None:
            out.append(g.sum(axis=(0, 1)))
        return out

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Node(y, parents, back)


def gelu(x: Node) -> Node:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF."""
    cdf = ndtr(x.value)

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.value * x.value)
        return [g * (cdf + x.value * pdf)]

    return Node(x.value * cdf, (x,), back)


def sigmoid(x: Node) -> Node:
    s = expit(x.value)

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return [g * s * (1.0 - s)]

    return Node(s, (x,), back)


def softmax(x: Node, axis: int = -1) -> Node:
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return [p * (g - (g * p).sum(axis=axis, keepdims=True))]

    return Node(p, (x,), back)


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    if not xs:
        raise ValueError("concat: nothing to concatenate")
    values = [n.value for n in xs]
    y = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return list(np.split(g, bounds, axis=axis))

    return Node(y, tuple(xs), back)


def add(a: Operand, b: Operand) -> Node:
    na, nb = _node(a), _node(b)

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return [_unbroadcast(g, na.shape), _unbroadcast(g, nb.shape)]

    return Node(na.value + nb.value, (na, nb), back)


def sub(a: Operand, b: Operand) -> Node:
    na, nb = _node(a), _node(b)

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return [_unbroadcast(g, na.shape), _unbroadcast(-g, nb.shape)]

    return Node(na.value - nb.value, (na, nb), back)


def mul(a: Operand, b: Operand) -> Node:
    na, nb = _node(a), _node(b)

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return [_unbroadcast(g * nb.value, na.shape), _unbroadcast(g * na.value, nb.shape)]

    return Node(na.value * nb.value, (na, nb), back)


def div(a: Operand, b: Operand) -> Node:
    na, nb = _node(a), _node(b)
    y = na.value / nb.value

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return [
            _unbroadcast(g / nb.value, na.shape),
            _unbroadcast(-g * y / nb.value, nb.shape),
        ]

    return Node(y, (na, nb), back)


def scale(x: Node, c: float) -> Node:
    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return [g * c]

    return Node(x.value * c, (x,), back)


def reduce_sum(x: Node, axis: Optional[int] = None, keepdims: bool = False) -> Node:
    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, x.shape).copy()]

    return Node(x.value.sum(axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Node) -> Node:
    return scale(reduce_sum(x), 1.0 / x.value.size)


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        return [g.reshape(x.shape)]

    return Node(x.value.reshape(shape), (x,), back)


def columns(x: Node, start: int, stop: int) -> Node:
    """x[:, start:stop] for a 2-D node."""

    def back(g: FloatArray) -> list[Optional[FloatArray]]:
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        return [full]

    return Node(x.value[:, start:stop], (x,), back)
