"""
Gate activation statistics: how often, and how strongly, each expert is used.

Each expert is attributed to the feature groups it reads: task experts read
known features and both latent domains, physical experts the city latents and
virtual experts the AS latents. A group's attribution is the summed mean gate
weight of the experts reading it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from ..errors import DataError
from ..latent import RegionalLatentModel
from ..types import RecordSet
from .network import R2slNetwork

ACTIVATION_COLUMNS = ("expert_id", "expert_kind", "mean_weight", "activation_rate")
ATTRIBUTION_COLUMNS = ("feature_group", "attribution")
FEATURE_GROUPS = ("known", "physical", "virtual")

_GROUPS_READ = {
    "task": ("known", "physical", "virtual"),
    "physical": ("physical",),
    "virtual": ("virtual",),
}


@dataclass(frozen=True)
class ExpertActivation:
    expert_id: int
    expert_kind: str
    mean_weight: float
    activation_rate: float


@dataclass(frozen=True)
class ActivationReport:
    experts: tuple[ExpertActivation, ...]
    attribution: dict[str, float]
    n_requests: int

    def rows(self) -> list[dict[str, str]]:
        return [
            {
                "expert_id": str(e.expert_id),
                "expert_kind": e.expert_kind,
                "mean_weight": repr(e.mean_weight),
                "activation_rate": repr(e.activation_rate),
            }
            for e in self.experts
        ]


def activation_stats(
    records: RecordSet, latent_model: RegionalLatentModel, network: R2slNetwork
) -> ActivationReport:
    if len(records) == 0:
        raise DataError("activation statistics need at least one record")
    decision = network.gate_decisions(records, latent_model)
    weights = decision.sparse.mean(axis=0)
    rates = decision.active_mask.mean(axis=0)
    cfg = network.config
    experts = tuple(
        ExpertActivation(i, cfg.expert_kind(i), float(weights[i]), float(rates[i]))
        for i in range(cfg.n_experts)
    )
    attribution = dict.fromkeys(FEATURE_GROUPS, 0.0)
    for e in experts:
        for group in _GROUPS_READ[e.expert_kind]:
            attribution[group] += e.mean_weight
    return ActivationReport(experts, attribution, len(records))


def write_activation_csv(path: Union[str, Path], report: ActivationReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=ACTIVATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(report.rows())


def write_attribution_csv(path: Union[str, Path], report: ActivationReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ATTRIBUTION_COLUMNS)
        for group in FEATURE_GROUPS:
            w.writerow([group, repr(report.attribution[group])])


def summary_lines(report: ActivationReport) -> list[str]:
    lines = [",".join(ACTIVATION_COLUMNS)]
    lines.extend(",".join(row[n] for n in ACTIVATION_COLUMNS) for row in report.rows())
    return lines

