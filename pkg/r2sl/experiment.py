"""
Grid runner: methods x densities x seeds over one dataset.

Every (density, seed) cell draws its split with that seed, fits (or reuses) the
latent model on the training records and runs each configured method on the
test records. Cells may run in worker processes; results are assembled in grid
order (density, seed, method) whatever the completion order.

Output directory layout:

    results.csv           one MetricReport row per method x density x seed
    summary.md            mean +- std per method and density
    ablation.csv          full model against its feature-masked variants
    activation/*.csv      gate activation and feature attribution per trained model
    cache/latent-*.json   fitted latent models, keyed by training records and config
    run.json              manifest naming every file above
    timings.json          wall-clock seconds per cell and method
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .backends import discover_records
from .baseline import mean_predict, upcc_fit
from .config import PSI_PREFIX, DataConfig, ExperimentConfig, digest
from .dataset import (
    SynthSpec,
    fractions_for,
    load_codebooks_near,
    make_splits,
    parse_matrix_files,
    read_codebooks,
    synthesize,
)
from .errors import ConfigError, R2slError
from .latent import LatentConfig, RegionalLatentModel, fit
from .loss import AggregateReport, LossSpec, MetricReport, aggregate_reports, write_reports
from .model import (
    NetworkConfig,
    activation_stats,
    train,
    write_activation_csv,
    write_attribution_csv,
)
from .nncore import make_rng
from .types import Codebooks, FloatArray, RecordSet, TableSizes

log = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.md"
ABLATION_FILE = "ablation.csv"
MANIFEST_FILE = "run.json"
TIMINGS_FILE = "timings.json"
CACHE_DIR = "cache"
ACTIVATION_DIR = "activation"

ABLATION_METHODS = ("r2sl", "r2sl_no_physical", "r2sl_no_virtual", "r2sl_no_latent")
ACTIVATION_METHODS = ("r2sl", "r2sl_dense_gate")
SUBSAMPLE_STREAM = 17

_MEAN_LEVELS = {"mean": "global", "mean_user": "user", "mean_service": "service"}
_MASKED = {
    "r2sl_no_physical": "no_physical",
    "r2sl_no_virtual": "no_virtual",
    "r2sl_no_latent": "no_latent",
}
_LOSS_METHODS = {"r2sl_huber": "huber", "r2sl_mae": "mae", "r2sl_mse": "mse"}


@dataclass(frozen=True)
class Variant:
    method: str
    kind: str  # "r2sl", "upcc" or "mean"
    network: Optional[NetworkConfig] = None
    loss: Optional[LossSpec] = None
    mean_level: str = "global"


def method_variant(method: str, config: ExperimentConfig) -> Variant:
    """Network configuration and loss (or baseline) a method name stands for."""
    net, loss = config.network, config.loss
    if method == "upcc":
        return Variant(method, "upcc")
    if method in _MEAN_LEVELS:
        return Variant(method, "mean", mean_level=_MEAN_LEVELS[method])
    if method == "r2sl":
        return Variant(method, "r2sl", net, loss)
    if method == "r2sl_dense_gate":
        return Variant(method, "r2sl", net.replace(dense_gate=True), loss)
    if method in _MASKED:
        return Variant(method, "r2sl", net.replace(feature_mask=_MASKED[method]), loss)
    if method in _LOSS_METHODS:
        spec = LossSpec(_LOSS_METHODS[method], varsigma=loss.varsigma, psi=loss.psi)
        return Variant(method, "r2sl", net, spec)
    if method.startswith(PSI_PREFIX):
        try:
            psi = float(method[len(PSI_PREFIX) :])
        except ValueError:
            raise ConfigError(f"bad psi in method name {method!r}") from None
        return Variant(method, "r2sl", net, LossSpec("s_huber", varsigma=loss.varsigma, psi=psi))
    raise ConfigError(f"unknown method {method!r}")


# ----- data -----


@dataclass(frozen=True, eq=False)
class Dataset:
    records: RecordSet
    codebooks: Codebooks
    source: str

    @property
    def sizes(self) -> TableSizes:
        return TableSizes.from_records(self.records, self.codebooks)


def _subsample(records: RecordSet, config: DataConfig) -> RecordSet:
    """Seeded subset of users and services, with ids renumbered densely."""
    if config.subsample_users is None and config.subsample_services is None:
        return records
    rng = make_rng(config.subsample_seed, SUBSAMPLE_STREAM)
    cols: dict[str, Any] = {}
    keep = np.ones(len(records), dtype=bool)
    for name, limit in (
        ("user_id", config.subsample_users),
        ("service_id", config.subsample_services),
    ):
        ids = np.unique(getattr(records, name))
        if limit is not None and limit < len(ids):
            ids = np.sort(rng.choice(ids, size=limit, replace=False))
        keep &= np.isin(getattr(records, name), ids)
        cols[name] = ids
    sub = records.subset(np.flatnonzero(keep))
    log.info(
        "subsampled %d users x %d services: %d of %d records",
        len(cols["user_id"]),
        len(cols["service_id"]),
        len(sub),
        len(records),
    )
    return dataclasses.replace(
        sub,
        user_id=np.searchsorted(cols["user_id"], sub.user_id),
        service_id=np.searchsorted(cols["service_id"], sub.service_id),
    )


def load_dataset(config: DataConfig) -> Dataset:
    if config.synth is not None:
        result = synthesize(SynthSpec.from_dict(config.synth))
        records, books, source = result.records, result.codebooks, "synth"
    elif config.matrix is not None:
        assert config.user_meta is not None and config.service_meta is not None
        parsed = parse_matrix_files(
            config.matrix,
            config.user_meta,
            config.service_meta,
            missing_sentinel=config.missing_sentinel,
            value_cap=config.cap,
        )
        records, books, source = parsed.records, parsed.codebooks, config.matrix
    else:
        store = discover_records(config.records)
        try:
            records = store.records
        finally:
            store.close()
        source = store.path
        if config.codebooks is not None:
            books = read_codebooks(config.codebooks)
        else:
            near = load_codebooks_near(source)
            books = near if near is not None else Codebooks.infer(records)
        keep = (records.value > 0) & (records.value <= config.cap)
        if not np.all(keep):
            log.info("dropped %d records outside (0, %g]", int(np.sum(~keep)), config.cap)
            records = records.subset(np.flatnonzero(keep))
    books.check(records)
    return Dataset(_subsample(records, config), books, source)


# ----- latent cache -----


def cache_path(cache_dir: Path, records: RecordSet, latent: LatentConfig) -> Path:
    key = digest(latent.to_dict())
    return cache_dir / f"latent-{records.fingerprint()[:16]}-{key[:16]}.json"


def cached_fit(
    records: RecordSet, codebooks: Codebooks, latent: LatentConfig, cache_dir: Optional[Path]
) -> tuple[RegionalLatentModel, Optional[Path]]:
    """fit(), reusing a model stored under cache_dir for the same records and config."""
    if cache_dir is None:
        return fit(records, codebooks, latent), None
    path = cache_path(cache_dir, records, latent)
    if path.is_file():
        log.info("latent cache hit: %s", path.name)
        return RegionalLatentModel.load(path), path
    log.warning("latent cache miss: fitting %s", path.name)
    model = fit(records, codebooks, latent)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    return model, path


# ----- grid -----


@dataclass(frozen=True)
class Cell:
    density: float
    seed: int

    @property
    def split(self) -> str:
        return f"{self.density:g}"

    @property
    def tag(self) -> str:
        return f"d{self.density:g}_s{self.seed}"


@dataclass
class CellResult:
    cell: Cell
    reports: list[MetricReport] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    latent_path: Optional[str] = None
    activation_paths: list[str] = field(default_factory=list)


def _predict(
    variant: Variant,
    train_set: RecordSet,
    valid_set: RecordSet,
    test_set: RecordSet,
    latent_model: Optional[RegionalLatentModel],
    dataset: Dataset,
    config: ExperimentConfig,
    seed: int,
) -> tuple[FloatArray, Any]:
    if variant.kind == "upcc":
        return upcc_fit(train_set, config.upcc).predict(test_set), None
    if variant.kind == "mean":
        return mean_predict(variant.mean_level, train_set).predict(test_set), None
    assert variant.network is not None and variant.loss is not None and latent_model is not None
    network, _ = train(
        train_set,
        valid_set,
        latent_model,
        variant.network.replace(seed=seed),
        variant.loss,
        sizes=dataset.sizes,
    )
    return network.predict(test_set, latent_model), network


def run_cell(
    cell: Cell, dataset: Dataset, config: ExperimentConfig, out_dir: Optional[Path]
) -> CellResult:
    result = CellResult(cell)
    fractions = fractions_for(cell.density, config.split.valid_frac)
    split = make_splits(dataset.records, cell.density, fractions, cell.seed)
    train_set, test_set, valid_set = split.apply(dataset.records)
    log.info("cell %s: %s", cell.tag, split.counts)

    variants = [method_variant(m, config) for m in config.experiment.all_methods]
    latent_model: Optional[RegionalLatentModel] = None
    latent_error: Optional[Exception] = None
    if any(v.kind == "r2sl" for v in variants):
        t0 = time.perf_counter()
        cache_dir = out_dir / CACHE_DIR if out_dir is not None else None
        try:
            latent_cfg = dataclasses.replace(config.latent, seed=cell.seed)
            latent_model, path = cached_fit(train_set, dataset.codebooks, latent_cfg, cache_dir)
            if path is not None and out_dir is not None:
                result.latent_path = path.relative_to(out_dir).as_posix()
        except Exception as e:
            log.error(
                "cell %s: latent fit failed: %s", cell.tag, e,
                exc_info=not isinstance(e, R2slError),
            )
            latent_error = e
        result.timings["latent_fit"] = time.perf_counter() - t0

    for variant in variants:
        t0 = time.perf_counter()
        if variant.kind == "r2sl" and latent_error is not None:
            result.reports.append(MetricReport.failed(variant.method, cell.split, cell.seed))
            continue
        try:
            pred, network = _predict(
                variant, train_set, valid_set, test_set, latent_model, dataset, config, cell.seed
            )
            report = MetricReport.evaluate(
                variant.method, cell.split, cell.seed, test_set.value, pred
            )
        except Exception as e:
            log.error(
                "cell %s: %s failed: %s", cell.tag, variant.method, e,
                exc_info=not isinstance(e, R2slError),
            )
            result.reports.append(MetricReport.failed(variant.method, cell.split, cell.seed))
            continue
        finally:
            result.timings[variant.method] = time.perf_counter() - t0
        result.reports.append(report)
        log.info(
            "cell %s: %s MAE %.4f RMSE %.4f", cell.tag, variant.method, report.mae, report.rmse
        )
        if (
            network is not None
            and out_dir is not None
            and variant.method in ACTIVATION_METHODS
            and latent_model is not None
        ):
            result.activation_paths.extend(
                _write_activation(out_dir, variant.method, cell, test_set, latent_model, network)
            )
    return result


def _write_activation(
    out_dir: Path,
    method: str,
    cell: Cell,
    records: RecordSet,
    latent_model: RegionalLatentModel,
    network: Any,
) -> list[str]:
    if len(records) == 0:
        return []
    report = activation_stats(records, latent_model, network)
    target = out_dir / ACTIVATION_DIR
    target.mkdir(parents=True, exist_ok=True)
    act = f"{ACTIVATION_DIR}/{method}_{cell.tag}.csv"
    attr = f"{ACTIVATION_DIR}/{method}_{cell.tag}_attribution.csv"
    write_activation_csv(out_dir / act, report)
    write_attribution_csv(out_dir / attr, report)
    return [act, attr]


def _cell_task(args: tuple[Cell, Dataset, ExperimentConfig, Optional[Path]]) -> CellResult:
    return run_cell(*args)


def grid_cells(config: ExperimentConfig) -> list[Cell]:
    return [Cell(d, s) for d in config.split.densities for s in config.experiment.seeds]


# ----- reports -----


def _fmt(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "failed"
    return f"{mean:.4f} ± {std:.4f}"


def summary_table(aggregates: Sequence[AggregateReport], methods: Sequence[str]) -> str:
    """Markdown table: one row per method, MAE and RMSE columns per density."""
    splits = list(dict.fromkeys(a.split for a in aggregates))
    by_key = {(a.method, a.split): a for a in aggregates}
    header = ["method"]
    for s in splits:
        header += [f"MAE @ {s}", f"RMSE @ {s}"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
    ]
    for method in methods:
        cells = [method]
        for s in splits:
            a = by_key.get((method, s))
            if a is None:
                cells += ["", ""]
            else:
                cells += [_fmt(a.mae_mean, a.mae_std), _fmt(a.rmse_mean, a.rmse_std)]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


ABLATION_COLUMNS = (
    "method",
    "split",
    "n_seeds",
    "mae_mean",
    "mae_std",
    "rmse_mean",
    "rmse_std",
    "mae_vs_full",
)


def ablation_rows(aggregates: Sequence[AggregateReport]) -> list[dict[str, str]]:
    """Feature-masked variants beside the full model, with MAE relative to it."""
    full = {a.split: a for a in aggregates if a.method == "r2sl"}
    rows = []
    for a in aggregates:
        if a.method not in ABLATION_METHODS:
            continue
        ref = full.get(a.split)
        rel = a.mae_mean / ref.mae_mean if ref is not None and ref.mae_mean > 0 else math.nan
        rows.append(
            {
                "method": a.method,
                "split": a.split,
                "n_seeds": str(a.n_seeds),
                "mae_mean": repr(a.mae_mean),
                "mae_std": repr(a.mae_std),
                "rmse_mean": repr(a.rmse_mean),
                "rmse_std": repr(a.rmse_std),
                "mae_vs_full": repr(rel),
            }
        )
    return rows


def _write_ablation(path: Path, rows: list[dict[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


@dataclass(frozen=True)
class RunArtifact:
    config_hash: str
    output_dir: Path
    reports: tuple[MetricReport, ...]
    aggregates: tuple[AggregateReport, ...]
    files: tuple[str, ...]  # relative to output_dir, each listed once
    latent_paths: tuple[str, ...]
    activation_paths: tuple[str, ...]
    timings: dict[str, dict[str, float]]

    @property
    def summary(self) -> str:
        return (self.output_dir / SUMMARY_FILE).read_text(encoding="utf-8")

    def to_manifest(self, config: ExperimentConfig) -> dict[str, Any]:
        return {
            "schema": "r2sl.run",
            "version": 1,
            "config_hash": self.config_hash,
            "config": config.to_dict(),
            "cells": len({(r.split, r.seed) for r in self.reports}),
            "rows": len(self.reports),
            "failed": sum(1 for r in self.reports if not r.ok),
            "results": RESULTS_FILE,
            "summary": SUMMARY_FILE,
            "ablation": ABLATION_FILE if ABLATION_FILE in self.files else None,
            "timings": TIMINGS_FILE,
            "latent_models": list(self.latent_paths),
            "activation": list(self.activation_paths),
        }


def run_experiment(
    config: ExperimentConfig,
    output_dir: Union[str, Path, None] = None,
    *,
    dataset: Optional[Dataset] = None,
) -> RunArtifact:
    out = Path(output_dir if output_dir is not None else config.experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = dataset if dataset is not None else load_dataset(config.data)
    cells = grid_cells(config)
    methods = config.experiment.all_methods
    log.info(
        "experiment %s: %d records, %d methods x %d densities x %d seeds",
        config.snapshot_hash()[:12],
        len(data.records),
        len(methods),
        len(config.split.densities),
        len(config.experiment.seeds),
    )

    tasks = [(c, data, config, out) for c in cells]
    workers = min(config.experiment.workers, len(cells))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_cell_task, tasks))
    else:
        results = [_cell_task(t) for t in tasks]

    reports = [r for res in results for r in res.reports]
    aggregates = aggregate_reports(reports)
    files = [RESULTS_FILE, SUMMARY_FILE]
    write_reports(out / RESULTS_FILE, reports)
    (out / SUMMARY_FILE).write_text(summary_table(aggregates, methods), encoding="utf-8")
    abl = ablation_rows(aggregates)
    if any(m in methods for m in ABLATION_METHODS[1:]):
        _write_ablation(out / ABLATION_FILE, abl)
        files.append(ABLATION_FILE)

    latent_paths = tuple(dict.fromkeys(r.latent_path for r in results if r.latent_path))
    activation_paths = tuple(p for r in results for p in r.activation_paths)
    timings = {r.cell.tag: r.timings for r in results}
    files += [*latent_paths, *activation_paths, TIMINGS_FILE, MANIFEST_FILE]
    artifact = RunArtifact(
        config.snapshot_hash(),
        out,
        tuple(reports),
        tuple(aggregates),
        tuple(files),
        latent_paths,
        activation_paths,
        timings,
    )
    (out / TIMINGS_FILE).write_text(
        json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / MANIFEST_FILE).write_text(
        json.dumps(artifact.to_manifest(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    n_failed = sum(1 for r in reports if not r.ok)
    if n_failed:
        log.warning("%d of %d grid runs failed; see %s", n_failed, len(reports), RESULTS_FILE)
    return artifact
