"""
Regional latent-state model parameters, configuration and persistence.

Shapes (m latent states):
    theta_u  m x n_user_city      delta_u  m x n_user_as
    theta_s  m x n_service_city   delta_s  m x n_service_as
    c_u, c_s length m             w        scalar
Every column of the four distribution matrices is a probability vector.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from ..dataset.synth import SynthSpec
from ..errors import ConfigError, DataError
from ..types import REGION_KINDS, Codebooks, FloatArray

SCHEMA = "r2sl.latent"
SCHEMA_VERSION = 1
COLUMN_TOL = 1e-9

# matrix attribute -> codebook kind it is indexed by
MATRIX_KINDS = {
    "theta_u": "user_city",
    "delta_u": "user_as",
    "theta_s": "service_city",
    "delta_s": "service_as",
}


@dataclass(frozen=True)
class LatentConfig:
    m: int = 4
    alpha: Optional[float] = None  # jitter scale; None means m (initial jitter 0.1/m)
    eta: float = 2.5
    w_init: float = 50.0
    learning_rate: float = 1e-3
    gamma: float = 1e-4
    max_iters: int = 200
    param_floor: float = 1e-6
    seed: int = 0
    max_backtracks: int = 20
    chunk_size: int = 65536

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ConfigError(f"latent.m must be >= 1, got {self.m}")
        if not self.eta > 0:
            raise ConfigError(f"latent.eta must be > 0, got {self.eta}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"latent.learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 < self.gamma < 1:
            raise ConfigError(f"latent.gamma must be in (0, 1), got {self.gamma}")
        if self.max_iters < 0:
            raise ConfigError("latent.max_iters must be >= 0")
        if not self.param_floor > 0:
            raise ConfigError("latent.param_floor must be > 0")
        if not self.w_init > 0:
            raise ConfigError("latent.w_init must be > 0")
        if self.alpha is not None and self.alpha < 0:
            raise ConfigError("latent.alpha must be >= 0")
        if self.chunk_size < 1:
            raise ConfigError("latent.chunk_size must be >= 1")

    @property
    def jitter(self) -> float:
        """Half-width of the symmetric perturbation applied to uniform initial columns."""
        alpha = float(self.m) if self.alpha is None else self.alpha
        return 0.1 * alpha / (self.m * self.m)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> LatentConfig:
        unknown = set(obj) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown latent settings: {', '.join(sorted(unknown))}")
        return cls(**obj)


def _hex(values: FloatArray) -> list[str]:
    return [float(v).hex() for v in np.ravel(values)]


def _unhex(items: list[str]) -> FloatArray:
    return np.array([float.fromhex(s) for s in items], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class RegionalLatentModel:
    theta_u: FloatArray
    theta_s: FloatArray
    delta_u: FloatArray
    delta_s: FloatArray
    c_u: FloatArray
    c_s: FloatArray
    w: float
    config: LatentConfig = field(default_factory=LatentConfig)
    fit_log: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        for name in ("theta_u", "theta_s", "delta_u", "delta_s", "c_u", "c_s"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "w", float(self.w))

    @property
    def m(self) -> int:
        return len(self.c_u)

    def sizes(self) -> dict[str, int]:
        return {kind: getattr(self, mat).shape[1] for mat, kind in MATRIX_KINDS.items()}

    def replace(self, **changes: Any) -> RegionalLatentModel:
        return dataclasses.replace(self, **changes)

    def check(self) -> None:
        """Raise DataError unless every stochastic and positivity invariant holds."""
        m = self.m
        if self.c_s.shape != (m,):
            raise DataError("c_u and c_s lengths differ")
        for name in MATRIX_KINDS:
            mat = getattr(self, name)
            if mat.ndim != 2 or mat.shape[0] != m:
                raise DataError(f"{name} must have {m} rows")
            if np.any(mat < 0) or not np.all(np.isfinite(mat)):
                raise DataError(f"{name} has negative or non-finite entries")
            if mat.shape[1] and np.any(np.abs(mat.sum(axis=0) - 1.0) > COLUMN_TOL):
                raise DataError(f"{name} has a column that does not sum to 1")
        floor = self.config.param_floor
        if np.any(self.c_u < floor) or np.any(self.c_s < floor) or self.w < floor:
            raise DataError("complexity factors fell below the parameter floor")

    def permuted(self, perm_u: Any, perm_s: Any) -> RegionalLatentModel:
        """Relabel user states by perm_u and service states by perm_s (new j = perm[old j])."""
        inv_u = np.argsort(np.asarray(perm_u))
        inv_s = np.argsort(np.asarray(perm_s))
        return self.replace(
            theta_u=self.theta_u[inv_u],
            delta_u=self.delta_u[inv_u],
            c_u=self.c_u[inv_u],
            theta_s=self.theta_s[inv_s],
            delta_s=self.delta_s[inv_s],
            c_s=self.c_s[inv_s],
        )

    # ----- persistence -----

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "schema": SCHEMA,
            "version": SCHEMA_VERSION,
            "dims": {"m": self.m, **self.sizes()},
            "config": self.config.to_dict(),
            "c_u": _hex(self.c_u),
            "c_s": _hex(self.c_s),
            "w": float(self.w).hex(),
            "fit_log": [float(v).hex() for v in self.fit_log],
        }
        for name in MATRIX_KINDS:
            # column-major: one region column after another
            doc[name] = _hex(getattr(self, name).T)
        return doc

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> RegionalLatentModel:
        if doc.get("schema") != SCHEMA:
            raise DataError(f"not a latent model document (schema {doc.get('schema')!r})")
        if doc.get("version") != SCHEMA_VERSION:
            raise DataError(f"unsupported latent model version {doc.get('version')!r}")
        dims = doc["dims"]
        m = int(dims["m"])
        mats = {}
        for name, kind in MATRIX_KINDS.items():
            cols = int(dims[kind])
            mats[name] = _unhex(doc[name]).reshape(cols, m).T
        model = cls(
            c_u=_unhex(doc["c_u"]),
            c_s=_unhex(doc["c_s"]),
            w=float.fromhex(doc["w"]),
            config=LatentConfig.from_dict(doc["config"]),
            fit_log=tuple(float.fromhex(v) for v in doc["fit_log"]),
            **mats,
        )
        model.check()
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> RegionalLatentModel:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"bad JSON: {e}", path=str(path)) from None
        return cls.from_document(doc)

    # ----- constructors -----

    @classmethod
    def uniform(
        cls, sizes: Mapping[str, int], config: LatentConfig, c_u: Any = None, c_s: Any = None
    ) -> RegionalLatentModel:
        m = config.m
        mats = {name: np.full((m, sizes[kind]), 1.0 / m) for name, kind in MATRIX_KINDS.items()}
        return cls(
            c_u=np.ones(m) if c_u is None else c_u,
            c_s=np.ones(m) if c_s is None else c_s,
            w=config.w_init,
            config=config,
            **mats,
        )

    @classmethod
    def from_truth(
        cls, spec: SynthSpec, config: Optional[LatentConfig] = None
    ) -> RegionalLatentModel:
        """The generating parameters of a synthetic spec, as a model."""
        cfg = config or LatentConfig(m=spec.m, eta=spec.eta)
        return cls(
            theta_u=spec.theta_u,
            theta_s=spec.theta_s,
            delta_u=spec.delta_u,
            delta_s=spec.delta_s,
            c_u=spec.c_u,
            c_s=spec.c_s,
            w=spec.w,
            config=cfg,
        )


def sizes_of(codebooks: Union[Codebooks, Mapping[str, int]]) -> dict[str, int]:
    if isinstance(codebooks, Codebooks):
        return codebooks.sizes()
    return {kind: int(codebooks[kind]) for kind in REGION_KINDS}
