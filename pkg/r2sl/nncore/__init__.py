"""Small deterministic float64 autodiff: nodes, ops, optimizers and gradient checking."""

from __future__ import annotations

from . import ops
from .gradcheck import GradCheckReport, analytic_grads, grad_check
from .optim import Adam, Sgd, adam_update, sgd_update
from .rng import RNG_ALGORITHM, make_rng
from .tensor import Node, Param, backward, constant, zero_grads

__all__ = [
    "RNG_ALGORITHM",
    "Adam",
    "GradCheckReport",
    "Node",
    "Param",
    "Sgd",
    "adam_update",
    "analytic_grads",
    "backward",
    "constant",
    "grad_check",
    "make_rng",
    "ops",
    "sgd_update",
    "zero_grads",
]
