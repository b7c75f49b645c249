#
# Experiment configuration.
#
# A TOML file with sections [data] [split] [latent] [network] [loss] [upcc]
# [experiment]; every key is optional and unknown keys are rejected. Relative
# paths are resolved against the directory holding the file. See README.md for
# the full schema.
#

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import tomllib
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .baseline import UpccConfig
from .errors import ConfigError
from .latent import LatentConfig
from .loss import LossSpec
from .model import NetworkConfig

QOS_KINDS = ("rt", "tp")
DEFAULT_CAP = {"rt": 20.0, "tp": math.inf}

BASE_METHODS = (
    "r2sl",
    "r2sl_dense_gate",
    "r2sl_no_physical",
    "r2sl_no_virtual",
    "r2sl_no_latent",
    "r2sl_huber",
    "r2sl_mae",
    "r2sl_mse",
    "upcc",
    "mean",
    "mean_user",
    "mean_service",
)
PSI_PREFIX = "r2sl_psi_"

# Fields that change where or how fast a run happens, not what it computes.
UNHASHED = {("experiment", "output_dir"), ("experiment", "workers")}


def psi_method(psi: float) -> str:
    return f"{PSI_PREFIX}{psi:g}"


def is_known_method(name: str) -> bool:
    if name in BASE_METHODS:
        return True
    if name.startswith(PSI_PREFIX):
        try:
            return float(name[len(PSI_PREFIX) :]) > 0
        except ValueError:
            return False
    return False


@dataclass(frozen=True)
class DataConfig:
    records: Optional[str] = None
    matrix: Optional[str] = None
    user_meta: Optional[str] = None
    service_meta: Optional[str] = None
    codebooks: Optional[str] = None
    synth: Optional[Mapping[str, Any]] = None
    qos_kind: str = "rt"
    value_cap: Optional[float] = None
    missing_sentinel: float = -1.0
    subsample_users: Optional[int] = None
    subsample_services: Optional[int] = None
    subsample_seed: int = 0

    def __post_init__(self) -> None:
        if self.qos_kind not in QOS_KINDS:
            raise ConfigError(f"data.qos_kind must be rt or tp, got {self.qos_kind!r}")
        if self.value_cap is not None and not self.value_cap > 0:
            raise ConfigError("data.value_cap must be > 0")
        sources = [
            self.records is not None,
            self.matrix is not None,
            self.synth is not None,
        ]
        if sum(sources) > 1:
            raise ConfigError("set only one of data.records, data.matrix and data.synth")
        if self.codebooks is not None and (self.matrix is not None or self.synth is not None):
            raise ConfigError("data.codebooks applies to record files only")
        if self.matrix is not None and (self.user_meta is None or self.service_meta is None):
            raise ConfigError("data.matrix needs data.user_meta and data.service_meta")
        for name in ("subsample_users", "subsample_services"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"data.{name} must be >= 1")

    @property
    def cap(self) -> float:
        return DEFAULT_CAP[self.qos_kind] if self.value_cap is None else self.value_cap


@dataclass(frozen=True)
class SplitConfig:
    densities: tuple[float, ...] = (0.05,)
    valid_frac: float = 0.1

    def __post_init__(self) -> None:
        if not self.densities:
            raise ConfigError("split.densities must list at least one density")
        for d in self.densities:
            if not 0.0 < d <= 1.0:
                raise ConfigError(f"split.densities: {d} is outside (0, 1]")
            if d + self.valid_frac > 1.0 + 1e-9:
                raise ConfigError(f"split: density {d} + valid_frac {self.valid_frac} exceed 1")
        if not 0.0 <= self.valid_frac < 1.0:
            raise ConfigError("split.valid_frac must be in [0, 1)")


@dataclass(frozen=True)
class ExperimentSettings:
    methods: tuple[str, ...] = ("r2sl", "upcc", "mean")
    seeds: tuple[int, ...] = (0,)
    psi_sweep: tuple[float, ...] = ()
    output_dir: str = "runs"
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.methods and not self.psi_sweep:
            raise ConfigError("experiment.methods must list at least one method")
        if not self.seeds:
            raise ConfigError("experiment.seeds must list at least one seed")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("experiment.seeds must be nonnegative")
        for m in self.methods:
            if not is_known_method(m):
                raise ConfigError(f"experiment.methods: unknown method {m!r}")
        if any(not p > 0 for p in self.psi_sweep):
            raise ConfigError("experiment.psi_sweep values must be > 0")
        if self.workers < 1:
            raise ConfigError("experiment.workers must be >= 1")

    @property
    def all_methods(self) -> tuple[str, ...]:
        """Configured methods followed by the psi sweep, without duplicates."""
        out = list(self.methods)
        for p in self.psi_sweep:
            name = psi_method(p)
            if name not in out:
                out.append(name)
        return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    latent: LatentConfig = field(default_factory=LatentConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossSpec = field(default_factory=LossSpec)
    upcc: UpccConfig = field(default_factory=UpccConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)

    def __post_init__(self) -> None:
        if self.network.latent_m != self.latent.m:
            raise ConfigError(
                f"network.latent_m ({self.network.latent_m}) must equal latent.m ({self.latent.m})"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            f.name: _plain(dataclasses.asdict(getattr(self, f.name)))
            for f in dataclasses.fields(self)
        }

    def snapshot_hash(self) -> str:
        """SHA-256 of the semantic fields as canonical JSON."""
        doc = self.to_dict()
        for section, key in UNHASHED:
            doc[section].pop(key, None)
        return digest(doc)

    def replace(self, **changes: Any) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def _plain(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def digest(obj: Any) -> str:
    """SHA-256 hex digest of canonical JSON."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


_SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "split": SplitConfig,
    "latent": LatentConfig,
    "network": NetworkConfig,
    "loss": LossSpec,
    "upcc": UpccConfig,
    "experiment": ExperimentSettings,
}
_PATH_KEYS = ("records", "matrix", "user_meta", "service_meta", "codebooks")


def _section(name: str, cls: type, raw: Any) -> Any:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown configuration key {name}.{key}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"[{name}]: {e}") from None


def config_from_mapping(
    obj: Mapping[str, Any], base_dir: Optional[Path] = None
) -> ExperimentConfig:
    for key in obj:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown configuration section [{key}]")
    raw = {k: dict(v) if isinstance(v, Mapping) else v for k, v in obj.items()}

    data = dict(raw.get("data", {}))
    if base_dir is not None:
        for key in _PATH_KEYS:
            if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
                data[key] = str(base_dir / data[key])
    raw["data"] = data

    latent = dict(raw.get("latent", {}))
    if data.get("qos_kind") == "tp" and "eta" not in latent:
        raise ConfigError("latent.eta must be set in throughput units when data.qos_kind = 'tp'")
    network = dict(raw.get("network", {}))
    if "m" in latent and "latent_m" not in network:
        network["latent_m"] = latent["m"]
    raw["network"] = network

    sections = {name: _section(name, cls, raw.get(name, {})) for name, cls in _SECTIONS.items()}
    return ExperimentConfig(**sections)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    p = Path(path)
    try:
        with open(p, "rb") as f:
            obj = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{p}: {e}") from None
    return config_from_mapping(obj, p.parent)
