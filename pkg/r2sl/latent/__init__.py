"""Regional latent-state model fitted by interleaved EM and gradient steps."""

from __future__ import annotations

from .em import (
    RegionMatrices,
    Responsibilities,
    assignment_agreement,
    e_step,
    exp_pdf,
    fit,
    gd_step,
    initial_model,
    latent_feature_matrix,
    latent_features,
    log_likelihood,
    m_step,
    mixture_weight,
    q_function,
    q_gradient,
    rate,
    region_assignments,
)
from .model import LatentConfig, RegionalLatentModel

__all__ = [
    "LatentConfig",
    "RegionMatrices",
    "RegionalLatentModel",
    "Responsibilities",
    "assignment_agreement",
    "e_step",
    "exp_pdf",
    "fit",
    "gd_step",
    "initial_model",
    "latent_feature_matrix",
    "latent_features",
    "log_likelihood",
    "m_step",
    "mixture_weight",
    "q_function",
    "q_gradient",
    "rate",
    "region_assignments",
]
