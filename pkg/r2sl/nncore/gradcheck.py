"""
Central finite-difference gradient checking.

The relative error of one coordinate is |a - n| / max(1, |a|, |n|) for analytic
gradient a and numeric gradient n, so near-zero gradients are compared absolutely.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import NumericalError
from ..types import FloatArray
from .rng import make_rng
from .tensor import Node, Param, backward, zero_grads

MIN_COORDS = 64


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst: str  # "name[flat index]" of the worst coordinate
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _scalar(out: Node) -> float:
    if out.value.size != 1:
        raise ValueError(f"closure must return a scalar node, got shape {out.shape}")
    v = float(out.value.reshape(()))
    if not math.isfinite(v):
        raise NumericalError("non-finite loss during gradient check")
    return v


def analytic_grads(closure: Callable[[], Node], params: Sequence[Param]) -> dict[str, FloatArray]:
    zero_grads(params)
    out = closure()
    _scalar(out)
    backward(out)
    return {p.name: p.grad.copy() for p in params}


def _coords(size: int, max_coords: int, seed: int, key: int) -> np.ndarray:
    if size <= max_coords:
        return np.arange(size)
    return np.sort(make_rng(seed, key).choice(size, size=max_coords, replace=False))


def grad_check(
    closure: Callable[[], Node],
    params: Sequence[Param],
    h: float = 1e-5,
    tolerance: float = 1e-5,
    *,
    max_coords: int = MIN_COORDS,
    seed: int = 0,
    analytic: Optional[Mapping[str, FloatArray]] = None,
) -> GradCheckReport:
    """
    Compare backprop gradients of the scalar `closure()` against central differences.
    Tensors larger than `max_coords` are checked on a seeded sample of that many
    coordinates. Pass `analytic` to check externally supplied gradients instead.
    """
    if max_coords < MIN_COORDS:
        raise ValueError(f"max_coords must be at least {MIN_COORDS}")
    grads = dict(analytic) if analytic is not None else analytic_grads(closure, params)
    worst_err = 0.0
    worst = ""
    checked = 0
    for key, p in enumerate(params):
        flat = p.value.reshape(-1)
        agrad = grads[p.name].reshape(-1)
        for i in _coords(flat.size, max_coords, seed, key):
            orig = flat[i]
            flat[i] = orig + h
            up = _scalar(closure())
            flat[i] = orig - h
            down = _scalar(closure())
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            a = float(agrad[i])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            checked += 1
            if err > worst_err or not worst:
                worst_err = max(err, worst_err)
                worst = f"{p.name}[{int(i)}]"
    return GradCheckReport(worst_err, worst, checked, tolerance)
