from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..types import FloatArray
from .tensor import Param


def sgd_update(params: Sequence[Param], learning_rate: float) -> None:
    for p in params:
        p.value -= learning_rate * p.grad


def adam_update(
    param: Param,
    m: FloatArray,
    v: FloatArray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    t: int,
) -> None:
    """One bias-corrected Adam step for `param` at step t >= 1; m and v are updated in place."""
    g = param.grad
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    params: Sequence[Param]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    moments: dict[str, tuple[FloatArray, FloatArray]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("parameter names must be unique")
        for p in self.params:
            self.moments.setdefault(p.name, (np.zeros_like(p.value), np.zeros_like(p.value)))

    def step(self) -> None:
        self.t += 1
        if self.lr == 0:
            return
        for p in self.params:
            m, v = self.moments[p.name]
            adam_update(p, m, v, self.lr, self.beta1, self.beta2, self.eps, self.t)


@dataclass
class Sgd:
    params: Sequence[Param]
    lr: float = 1e-2

    def step(self) -> None:
        sgd_update(self.params, self.lr)
