"""Sparsely gated mixture-of-experts network over region latent features."""

from __future__ import annotations

from .config import FEATURE_MASKS, NetworkConfig
from .network import (
    FeatureBundle,
    GateDecision,
    InputBatch,
    R2slNetwork,
    build_inputs,
    encode_records,
    expert_forward,
    forward,
    gate_forward,
    network_summary,
)
from .persist import NetworkDocument, load_network, save_network
from .stats import (
    ActivationReport,
    activation_stats,
    write_activation_csv,
    write_attribution_csv,
)
from .train import EpochStats, TrainHistory, train

__all__ = [
    "FEATURE_MASKS",
    "ActivationReport",
    "EpochStats",
    "FeatureBundle",
    "GateDecision",
    "InputBatch",
    "NetworkConfig",
    "NetworkDocument",
    "R2slNetwork",
    "TrainHistory",
    "activation_stats",
    "build_inputs",
    "encode_records",
    "expert_forward",
    "forward",
    "gate_forward",
    "load_network",
    "network_summary",
    "save_network",
    "train",
    "write_activation_csv",
    "write_attribution_csv",
]
