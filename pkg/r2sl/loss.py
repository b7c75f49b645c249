#
# Training losses and evaluation metrics.
#
# With e = y - yhat (elementwise, before batch-mean reduction):
#   s_huber  0.5 e^2                          if |e| <  varsigma
#            psi (varsigma |e| - 0.5 varsigma^2)  otherwise
#   huber    0.5 e^2 if |e| <= delta else delta |e| - 0.5 delta^2
#   mae      |e|
#   mse      e^2
# s_huber is discontinuous at |e| = varsigma unless psi = 1; the boundary point
# belongs to the linear branch. Gradients are with respect to yhat.
#

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np
import numpy.typing as npt

from .errors import ConfigError, DataError
from .nncore.tensor import Node
from .types import FloatArray

LOSS_KINDS = ("s_huber", "huber", "mae", "mse")
REPORT_COLUMNS = ("method", "split", "seed", "mae", "rmse", "n")

LossPair = tuple[FloatArray, FloatArray]


@dataclass(frozen=True)
class LossSpec:
    kind: str = "s_huber"
    varsigma: float = 0.5
    psi: float = 0.05

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ConfigError(
                f"loss.kind must be one of {', '.join(LOSS_KINDS)}, got {self.kind!r}"
            )
        if not self.varsigma > 0:
            raise ConfigError(f"loss.varsigma must be > 0, got {self.varsigma}")
        if not self.psi > 0:
            raise ConfigError(f"loss.psi must be > 0, got {self.psi}")

    @property
    def label(self) -> str:
        if self.kind == "s_huber":
            return f"s_huber(varsigma={self.varsigma:g}, psi={self.psi:g})"
        if self.kind == "huber":
            return f"huber(delta={self.varsigma:g})"
        return self.kind

    def elementwise(self, y: npt.ArrayLike, yhat: npt.ArrayLike) -> LossPair:
        if self.kind == "s_huber":
            return s_huber(y, yhat, self.varsigma, self.psi)
        if self.kind == "huber":
            return huber(y, yhat, self.varsigma)
        if self.kind == "mae":
            return mae_loss(y, yhat)
        return mse_loss(y, yhat)

    def batch(self, y: npt.ArrayLike, yhat: npt.ArrayLike) -> tuple[float, FloatArray]:
        """Batch-mean loss and its gradient with respect to each prediction."""
        values, grads = self.elementwise(y, yhat)
        n = values.size
        if n == 0:
            raise DataError("loss over an empty batch")
        return float(values.mean()), grads / n


def _errors(y: npt.ArrayLike, yhat: npt.ArrayLike) -> FloatArray:
    ya = np.asarray(y, dtype=np.float64)
    pa = np.asarray(yhat, dtype=np.float64)
    if ya.shape != pa.shape:
        raise ValueError(f"targets {ya.shape} and predictions {pa.shape} differ in shape")
    e: FloatArray = ya - pa
    return e


def s_huber(
    y: npt.ArrayLike, yhat: npt.ArrayLike, varsigma: float = 0.5, psi: float = 0.05
) -> LossPair:
    e = _errors(y, yhat)
    a = np.abs(e)
    quad = a < varsigma
    loss = np.where(quad, 0.5 * e * e, psi * (varsigma * a - 0.5 * varsigma * varsigma))
    grad = np.where(quad, -e, -psi * varsigma * np.sign(e))
    return loss, grad


def huber(y: npt.ArrayLike, yhat: npt.ArrayLike, delta: float = 0.5) -> LossPair:
    e = _errors(y, yhat)
    a = np.abs(e)
    quad = a <= delta
    loss = np.where(quad, 0.5 * e * e, delta * a - 0.5 * delta * delta)
    grad = np.where(quad, -e, -delta * np.sign(e))
    return loss, grad


def mae_loss(y: npt.ArrayLike, yhat: npt.ArrayLike) -> LossPair:
    e = _errors(y, yhat)
    return np.abs(e), -np.sign(e)


def mse_loss(y: npt.ArrayLike, yhat: npt.ArrayLike) -> LossPair:
    e = _errors(y, yhat)
    return e * e, -2.0 * e


def loss_node(spec: LossSpec, pred: Node, target: npt.ArrayLike) -> Node:
    """Batch-mean loss of `pred` as a scalar graph node."""
    value, grad = spec.batch(target, pred.value)

    def back(g: FloatArray) -> list[Any]:
        return [g * grad]

    return Node(value, (pred,), back)


def _pair_errors(y: npt.ArrayLike, yhat: npt.ArrayLike) -> FloatArray:
    e = _errors(y, yhat)
    if e.size == 0:
        raise DataError("metric over an empty prediction set")
    return e


def mae(y: npt.ArrayLike, yhat: npt.ArrayLike) -> float:
    return float(np.mean(np.abs(_pair_errors(y, yhat))))


def rmse(y: npt.ArrayLike, yhat: npt.ArrayLike) -> float:
    e = _pair_errors(y, yhat)
    return math.sqrt(float(np.mean(e * e)))


@dataclass(frozen=True)
class MetricReport:
    method: str
    split: str
    seed: int
    mae: float
    rmse: float
    n: int

    @classmethod
    def evaluate(
        cls, method: str, split: str, seed: int, y: npt.ArrayLike, yhat: npt.ArrayLike
    ) -> MetricReport:
        e = _pair_errors(y, yhat)
        return cls(method, split, seed, mae(y, yhat), rmse(y, yhat), int(e.size))

    @classmethod
    def failed(cls, method: str, split: str, seed: int) -> MetricReport:
        return cls(method, split, seed, math.nan, math.nan, 0)

    @property
    def ok(self) -> bool:
        return self.n > 0 and math.isfinite(self.mae)

    def row(self) -> dict[str, str]:
        return {
            "method": self.method,
            "split": self.split,
            "seed": str(self.seed),
            "mae": repr(self.mae),
            "rmse": repr(self.rmse),
            "n": str(self.n),
        }


def write_reports(path: Union[str, Path], reports: Iterable[MetricReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def read_reports(path: Union[str, Path]) -> list[MetricReport]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise DataError(f"expected header {','.join(REPORT_COLUMNS)}", path=str(path), line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(
                    MetricReport(
                        row["method"],
                        row["split"],
                        int(row["seed"]),
                        float(row["mae"]),
                        float(row["rmse"]),
                        int(row["n"]),
                    )
                )
            except (TypeError, ValueError) as e:
                raise DataError(f"bad report row: {e}", path=str(path), line=lineno) from None
    return out


@dataclass(frozen=True)
class AggregateReport:
    method: str
    split: str
    n_seeds: int
    mae_mean: float
    mae_std: float
    rmse_mean: float
    rmse_std: float

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def aggregate_reports(rows: Iterable[MetricReport]) -> list[AggregateReport]:
    """
    Mean and sample standard deviation over seeds per (method, split), in order of
    first appearance. Failed runs are skipped; a group with one seed has std 0.
    """
    groups: dict[tuple[str, str], list[MetricReport]] = {}
    for r in rows:
        groups.setdefault((r.method, r.split), [])
        if r.ok:
            groups[(r.method, r.split)].append(r)
    out = []
    for (method, split), rs in groups.items():
        if not rs:
            out.append(AggregateReport(method, split, 0, math.nan, math.nan, math.nan, math.nan))
            continue
        maes = np.array([r.mae for r in rs])
        rmses = np.array([r.rmse for r in rs])
        ddof = 1 if len(rs) > 1 else 0
        out.append(
            AggregateReport(
                method,
                split,
                len(rs),
                float(maes.mean()),
                float(maes.std(ddof=ddof)),
                float(rmses.mean()),
                float(rmses.std(ddof=ddof)),
            )
        )
    return out


def loss_curve(errors: Sequence[float], specs: Sequence[LossSpec]) -> list[dict[str, float]]:
    """Per-error loss value under each spec (one row per error e = y - yhat)."""
    e = np.asarray(errors, dtype=np.float64)
    zeros = np.zeros_like(e)
    columns = [spec.elementwise(e, zeros)[0] for spec in specs]
    rows = []
    for i, err in enumerate(e):
        row = {"error": float(err)}
        for spec, col in zip(specs, columns):
            row[spec.label] = float(col[i])
        rows.append(row)
    return rows
