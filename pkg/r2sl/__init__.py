"""
r2sl: regional latent-state QoS prediction.

Public API:
    - Records & storage:
        QosRecord, RecordSet, Codebooks, open_records, read_records, write_records
    - Regional latent model (EM + gradient steps):
        LatentConfig, RegionalLatentModel, fit, e_step, m_step, gd_step
    - Mixture-of-experts network:
        NetworkConfig, R2slNetwork, train
    - Losses, metrics and baselines:
        LossSpec, MetricReport, mae, rmse, UpccConfig, upcc_fit, mean_predict
    - Experiments:
        ExperimentConfig, load_config, run_experiment
"""

from __future__ import annotations

# Version from installed dist; falls back to dev string when run from source tree.
try:
    from importlib.metadata import PackageNotFoundError, version
except Exception:  # pragma: no cover
    version = None  # type: ignore[assignment]
    PackageNotFoundError = Exception  # type: ignore[assignment, misc]

try:  # pragma: no cover
    __version__ = version("r2sl")
except (PackageNotFoundError, Exception):  # pragma: no cover
    __version__ = "0.0.0.dev0"

# Public API re-exports
from .api import open_records, read_records, write_records
from .baseline import UpccConfig, mean_predict, upcc_fit
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, NumericalError, R2slError
from .experiment import run_experiment
from .latent import LatentConfig, RegionalLatentModel, e_step, fit, gd_step, m_step
from .loss import LossSpec, MetricReport, mae, rmse
from .model import NetworkConfig, R2slNetwork, train
from .types import Codebooks, QosRecord, RecordSet

__all__ = [
    "__version__",
    # records
    "Codebooks",
    "QosRecord",
    "RecordSet",
    "open_records",
    "read_records",
    "write_records",
    # latent model
    "LatentConfig",
    "RegionalLatentModel",
    "e_step",
    "fit",
    "gd_step",
    "m_step",
    # network
    "NetworkConfig",
    "R2slNetwork",
    "train",
    # losses, metrics, baselines
    "LossSpec",
    "MetricReport",
    "UpccConfig",
    "mae",
    "mean_predict",
    "rmse",
    "upcc_fit",
    # experiments
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    # errors
    "ConfigError",
    "DataError",
    "NumericalError",
    "R2slError",
]
