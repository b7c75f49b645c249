from __future__ import annotations

import dataclasses
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..errors import ConfigError
from ..types import FloatArray

# Order of the four latent projections in every feature bundle.
LATENT_PARTS = ("theta_u", "delta_u", "theta_s", "delta_s")
PHYSICAL_PARTS = ("theta_u", "theta_s")
VIRTUAL_PARTS = ("delta_u", "delta_s")
ID_TABLES = ("user_id", "service_id", "user_city", "user_as", "service_city", "service_as")

# Which latent projections survive each ablation (the rest are zeroed).
FEATURE_MASKS: dict[str, tuple[str, ...]] = {
    "full": LATENT_PARTS,
    "no_physical": VIRTUAL_PARTS,
    "no_virtual": PHYSICAL_PARTS,
    "no_latent": (),
}

EXPERT_KINDS = ("task", "physical", "virtual")


@dataclass(frozen=True)
class NetworkConfig:
    embed_dim: int = 16
    hidden: int = 32
    gate_hidden: int = 32
    n_task_experts: int = 2
    n_domain_experts: int = 2
    top_k: int = 2
    decoder_v: int = 5
    latent_m: int = 4
    dense_gate: bool = False
    feature_mask: str = "full"
    seed: int = 0
    batch_size: int = 256
    epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        for name in ("embed_dim", "hidden", "gate_hidden", "latent_m", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"network.{name} must be >= 1, got {getattr(self, name)}")
        if self.n_task_experts < 0 or self.n_domain_experts < 0 or self.n_experts < 1:
            raise ConfigError("network needs at least one expert")
        if not 1 <= self.top_k <= self.n_experts:
            raise ConfigError(f"network.top_k must be in [1, {self.n_experts}], got {self.top_k}")
        if self.decoder_v < 2:
            raise ConfigError(f"network.decoder_v must be >= 2, got {self.decoder_v}")
        if self.feature_mask not in FEATURE_MASKS:
            raise ConfigError(
                f"network.feature_mask must be one of {', '.join(FEATURE_MASKS)}, "
                f"got {self.feature_mask!r}"
            )
        if self.epochs < 0:
            raise ConfigError("network.epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("network.learning_rate must be >= 0")

    @property
    def n_experts(self) -> int:
        return self.n_task_experts + self.n_domain_experts

    @property
    def active_experts(self) -> int:
        return self.n_experts if self.dense_gate else self.top_k

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        v = self.decoder_v
        return (2**v, 2 ** (v - 1), 2 ** (v - 2), 1)

    def expert_kind(self, i: int) -> str:
        """Task experts first, then domain experts alternating physical and virtual."""
        if not 0 <= i < self.n_experts:
            raise IndexError(i)
        if i < self.n_task_experts:
            return "task"
        return "physical" if (i - self.n_task_experts) % 2 == 0 else "virtual"

    def latent_mask(self) -> FloatArray:
        """1.0 for each latent projection kept under feature_mask, 0.0 otherwise."""
        kept = FEATURE_MASKS[self.feature_mask]
        return np.array([1.0 if part in kept else 0.0 for part in LATENT_PARTS])

    def replace(self, **changes: Any) -> NetworkConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> NetworkConfig:
        unknown = set(obj) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown network settings: {', '.join(sorted(unknown))}")
        return cls(**obj)
