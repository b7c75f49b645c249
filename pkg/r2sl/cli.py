#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
r2sl command line.

    r2sl prepare      WS-Dream matrix + metadata -> canonical records (+ optional split)
    r2sl fit-latent   fit the regional latent-state model
    r2sl train        train the mixture-of-experts network (one per --seeds entry)
    r2sl evaluate     MAE/RMSE of one or more trained networks
    r2sl experiment   methods x densities x seeds grid from a TOML config
    r2sl gate-stats   expert activation for one request or a record set
    r2sl synth        synthetic records from a known latent model
    r2sl loss-curve   loss values over a range of errors

Results go to stdout (or --out files), logs to stderr.
Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NoReturn, Optional

import numpy as np

from .api import open_records, write_records, write_records_bin
from .config import DEFAULT_CAP, QOS_KINDS, ExperimentConfig, load_config
from .dataset import (
    SynthSpec,
    distribution_report,
    fractions_for,
    load_codebooks_near,
    make_splits,
    parse_matrix_files,
    synthesize,
    write_codebooks,
    write_split_manifest,
)
from .dataset.wsdream import DEFAULT_SENTINEL
from .errors import DataError, R2slError, UsageError
from .experiment import run_experiment
from .latent import LatentConfig, RegionalLatentModel, fit
from .loss import LOSS_KINDS, LossSpec, MetricReport, aggregate_reports, loss_curve, write_reports
from .model import (
    NetworkConfig,
    activation_stats,
    load_network,
    save_network,
    train,
    write_activation_csv,
    write_attribution_csv,
)
from .model.stats import summary_lines
from .types import Codebooks, QosRecord, RecordSet, TableSizes

log = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors raised as UsageError (exit 1) instead of exit 2."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _load(path: Optional[str]) -> tuple[RecordSet, Codebooks, str]:
    store = open_records(path)
    try:
        records = store.records
    finally:
        store.close()
    books = load_codebooks_near(store.path)
    return records, books if books is not None else Codebooks.infer(records), store.path


def _config(path: Optional[str]) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


# ----- prepare -----


@dataclass
class PrepareArgs:
    matrix: str
    user_meta: str
    service_meta: str
    out: str
    cap: Optional[float] = None
    sentinel: float = DEFAULT_SENTINEL
    qos_kind: str = "rt"
    binary: bool = False
    density: Optional[float] = None
    valid_frac: float = 0.1
    seed: int = 0


def run_prepare(args: PrepareArgs) -> None:
    cap = DEFAULT_CAP[args.qos_kind] if args.cap is None else args.cap
    parsed = parse_matrix_files(
        args.matrix,
        args.user_meta,
        args.service_meta,
        missing_sentinel=args.sentinel,
        value_cap=cap,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    (write_records_bin if args.binary else write_records)(out, parsed.records)
    write_codebooks(out.with_name("codebooks.json"), parsed.codebooks)

    print(f"users: {parsed.n_users}")
    print(f"services: {parsed.n_services}")
    print(f"dropped over cap: {parsed.dropped_over_cap}")
    print(f"dropped non-positive: {parsed.dropped_nonpositive}")
    if len(parsed.records):
        for line in distribution_report(parsed.records).summary_lines():
            print(line)

    if args.density is not None:
        split = make_splits(
            parsed.records,
            args.density,
            fractions_for(args.density, args.valid_frac),
            args.seed,
        )
        write_split_manifest(out.with_name("split.json"), split, records=out.name)
        for name, subset in zip(("train", "test", "valid"), split.apply(parsed.records)):
            write_records(out.with_name(f"{name}.csv"), subset)
        counts = split.counts
        print(f"split: train {counts['train']}, test {counts['test']}, valid {counts['valid']}")


# ----- fit-latent -----


@dataclass
class FitLatentArgs:
    out: str
    records: Optional[str] = None
    config: Optional[str] = None
    m: Optional[int] = None
    seed: Optional[int] = None
    tail: int = 5


def run_fit_latent(args: FitLatentArgs) -> None:
    cfg: LatentConfig = _config(args.config).latent
    overrides = {k: v for k, v in (("m", args.m), ("seed", args.seed)) if v is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    records, books, _ = _load(args.records)
    model = fit(records, books, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)

    trace = model.fit_log
    start = max(len(trace) - args.tail, 0)
    for i in range(start, len(trace)):
        print(f"iter {i}: log-likelihood {trace[i]:.10g}")
    print(f"final log-likelihood: {trace[-1]:.10g}")


# ----- train -----


@dataclass
class TrainArgs:
    records: str
    latent: str
    out: str
    config: Optional[str] = None
    loss: Optional[str] = None
    valid: Optional[str] = None
    universe: Optional[str] = None
    seeds: Optional[list[int]] = None


def seed_path(out: Path, seed: int, n_seeds: int) -> Path:
    """`out` itself for a single run, `<stem>.s<seed><suffix>` otherwise."""
    if n_seeds == 1:
        return out
    return out.with_name(f"{out.stem}.s{seed}{out.suffix}")


def split_universe(records_path: str) -> Optional[str]:
    """The full record file a split.json beside `records_path` was drawn from."""
    manifest = Path(records_path).with_name("split.json")
    if not manifest.is_file():
        return None
    name = json.loads(manifest.read_text(encoding="utf-8")).get("records")
    if not name:
        return None
    full = manifest.with_name(name)
    return str(full) if full.is_file() else None


def covering_sizes(sizes: TableSizes, extra: RecordSet) -> TableSizes:
    if not len(extra):
        return sizes
    return dataclasses.replace(
        sizes,
        n_users=max(sizes.n_users, int(extra.user_id.max()) + 1),
        n_services=max(sizes.n_services, int(extra.service_id.max()) + 1),
        n_user_city=max(sizes.n_user_city, int(extra.user_city.max()) + 1),
        n_user_as=max(sizes.n_user_as, int(extra.user_as.max()) + 1),
        n_service_city=max(sizes.n_service_city, int(extra.service_city.max()) + 1),
        n_service_as=max(sizes.n_service_as, int(extra.service_as.max()) + 1),
    )


def run_train(args: TrainArgs) -> None:
    exp = _config(args.config)
    latent_model = RegionalLatentModel.load(args.latent)
    network_cfg: NetworkConfig = exp.network
    if args.config is None:
        network_cfg = network_cfg.replace(latent_m=latent_model.m)
    loss = exp.loss if args.loss is None else dataclasses.replace(exp.loss, kind=args.loss)

    records, books, source = _load(args.records)
    valid = _load(args.valid)[0] if args.valid else RecordSet.empty()
    universe = args.universe or split_universe(source)
    if universe:
        full, ubooks, _ = _load(universe)
        sizes = TableSizes.from_records(full, ubooks)
    else:
        log.warning("no --universe: id tables sized from the training and validation records")
        sizes = covering_sizes(TableSizes.from_records(records, books), valid)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    seeds = args.seeds or [network_cfg.seed]
    for seed in seeds:
        network, history = train(
            records, valid, latent_model, network_cfg.replace(seed=seed), loss, sizes=sizes
        )
        path = seed_path(out, seed, len(seeds))
        latent_ref = os.path.relpath(Path(args.latent).resolve(), path.parent.resolve())
        save_network(
            path,
            network,
            latent_model,
            history,
            latent_path=Path(latent_ref).as_posix(),
            loss=dataclasses.asdict(loss),
        )
        final = history.epochs[history.best_epoch - 1].valid_mae if history.best_epoch else None
        shown = "initial" if final is None else f"{final:.6f}"
        print(f"{path}: seed {seed}, best epoch {history.best_epoch}, monitored MAE {shown}")


# ----- evaluate -----


@dataclass
class EvaluateArgs:
    models: list[str]
    records: str
    latent: Optional[str] = None
    out: Optional[str] = None
    method: str = "r2sl"
    split: str = "test"


def evaluate_models(args: EvaluateArgs) -> list[MetricReport]:
    records, _, _ = _load(args.records)
    reports = []
    for path in args.models:
        doc = load_network(path)
        latent_path = (
            Path(args.latent)
            if args.latent
            else doc.resolve_latent_path(Path(path).parent)
        )
        if latent_path is None:
            raise UsageError(f"{path} names no latent model; pass --latent")
        latent_model = RegionalLatentModel.load(latent_path)
        doc.check_latent(latent_model)
        pred = doc.network.predict(records, latent_model)
        reports.append(
            MetricReport.evaluate(
                args.method, args.split, doc.network.config.seed, records.value, pred
            )
        )
    return reports


def run_evaluate(args: EvaluateArgs) -> None:
    reports = evaluate_models(args)
    if args.out:
        write_reports(args.out, reports)
    for r in reports:
        print(f"{r.method} {r.split} seed {r.seed}: MAE {r.mae:.6f} RMSE {r.rmse:.6f} (n={r.n})")
    if len(reports) > 1:
        for a in aggregate_reports(reports):
            print(
                f"{a.method} {a.split} over {a.n_seeds} seeds: "
                f"MAE {a.mae_mean:.6f} ± {a.mae_std:.6f} "
                f"RMSE {a.rmse_mean:.6f} ± {a.rmse_std:.6f}"
            )


# ----- experiment -----


@dataclass
class ExperimentArgs:
    config: str
    out: Optional[str] = None
    workers: Optional[int] = None


def run_experiment_cmd(args: ExperimentArgs) -> None:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg = cfg.replace(experiment=dataclasses.replace(cfg.experiment, workers=args.workers))
    artifact = run_experiment(cfg, args.out)
    print(artifact.summary, end="")


# ----- gate-stats -----


@dataclass
class GateStatsArgs:
    model: str
    records: Optional[str] = None
    latent: Optional[str] = None
    user: Optional[int] = None
    service: Optional[int] = None
    out: Optional[str] = None
    attribution: Optional[str] = None


def query_records(records: RecordSet, user: int, service: int) -> RecordSet:
    """
    A single request (user, service), with region codes taken from any record
    of that user and any record of that service.
    """
    hit = np.flatnonzero((records.user_id == user) & (records.service_id == service))
    if len(hit):
        return records.subset(hit[:1])
    u = np.flatnonzero(records.user_id == user)
    s = np.flatnonzero(records.service_id == service)
    if not len(u):
        raise DataError(f"user {user} does not appear in the records")
    if not len(s):
        raise DataError(f"service {service} does not appear in the records")
    ru, rs = records[int(u[0])], records[int(s[0])]
    return RecordSet.from_records(
        [QosRecord(user, service, 0.0, ru.user_city, ru.user_as, rs.service_city, rs.service_as)]
    )


def run_gate_stats(args: GateStatsArgs) -> None:
    if (args.user is None) != (args.service is None):
        raise UsageError("--user and --service go together")
    doc = load_network(args.model)
    latent_path = (
        Path(args.latent) if args.latent else doc.resolve_latent_path(Path(args.model).parent)
    )
    if latent_path is None:
        raise UsageError(f"{args.model} names no latent model; pass --latent")
    latent_model = RegionalLatentModel.load(latent_path)
    doc.check_latent(latent_model)
    records, _, _ = _load(args.records)
    if args.user is not None and args.service is not None:
        records = query_records(records, args.user, args.service)
    report = activation_stats(records, latent_model, doc.network)
    if args.out:
        write_activation_csv(args.out, report)
    if args.attribution:
        write_attribution_csv(args.attribution, report)
    for line in summary_lines(report):
        print(line)
    for group, value in report.attribution.items():
        print(f"# {group}: {value:.6f}")


# ----- synth -----


@dataclass
class SynthArgs:
    spec: str
    out: str


def run_synth(args: SynthArgs) -> None:
    try:
        obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"bad JSON: {e}", path=args.spec) from None
    spec = SynthSpec.from_dict(obj)
    result = synthesize(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "records.csv", result.records)
    write_codebooks(out / "codebooks.json", result.codebooks)
    with open(out / "states.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("user_state", "service_state"))
        w.writerows(result.states.tolist())
    RegionalLatentModel.from_truth(spec).save(out / "truth.json")
    (out / "spec.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(result.records)} records to {out}")


# ----- loss-curve -----


@dataclass
class LossCurveArgs:
    errors: Optional[list[float]] = None
    lo: float = -2.0
    hi: float = 2.0
    points: int = 41
    varsigma: float = 0.5
    psi: float = 0.05
    out: Optional[str] = None


def run_loss_curve(args: LossCurveArgs) -> None:
    if args.errors:
        errors = list(args.errors)
    else:
        if args.points < 2:
            raise UsageError("--points must be >= 2")
        errors = np.linspace(args.lo, args.hi, args.points).tolist()
    specs = [
        LossSpec("s_huber", args.varsigma, args.psi),
        LossSpec("huber", args.varsigma),
        LossSpec("mae"),
        LossSpec("mse"),
    ]
    rows = loss_curve(errors, specs)
    fields = ["error", *(s.label for s in specs)]

    def emit(f: Any) -> None:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows({k: repr(v) for k, v in row.items()} for row in rows)

    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            emit(f)
    else:
        emit(sys.stdout)


# ----- entry point -----


def build_parser() -> ArgumentParser:
    ap = ArgumentParser(prog="r2sl", description="Regional latent-state QoS prediction")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat)")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def command(
        name: str, handler: Callable[[Any], None], args_type: type, help_text: str
    ) -> ArgumentParser:
        p: ArgumentParser = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(handler=handler, args_type=args_type)
        return p

    p = command("prepare", run_prepare, PrepareArgs, "parse a WS-Dream matrix into records")
    p.add_argument("--matrix", required=True, help="whitespace separated QoS matrix")
    p.add_argument("--user-meta", dest="user_meta", required=True)
    p.add_argument("--service-meta", dest="service_meta", required=True)
    p.add_argument("--out", required=True, help="record file to write (codebooks.json beside it)")
    p.add_argument("--cap", type=float, default=None, help="drop values above (default by kind)")
    p.add_argument("--sentinel", type=float, default=DEFAULT_SENTINEL, help="missing-cell value")
    p.add_argument("--qos-kind", dest="qos_kind", choices=QOS_KINDS, default="rt")
    p.add_argument("--binary", action="store_true", help="write the binary record format")
    p.add_argument("--density", type=float, default=None, help="also write a density split")
    p.add_argument("--valid-frac", dest="valid_frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = command("fit-latent", run_fit_latent, FitLatentArgs, "fit the regional latent model")
    p.add_argument("--records", default=None, help="record file (default: R2SL_RECORDS*)")
    p.add_argument("--config", default=None, help="TOML config; its [latent] table is used")
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=None, help="override latent.m")
    p.add_argument("--seed", type=int, default=None, help="override latent.seed")
    p.add_argument("--tail", type=int, default=5, help="log-likelihood trace lines to print")

    p = command("train", run_train, TrainArgs, "train the mixture-of-experts network")
    p.add_argument("--records", required=True, help="training records")
    p.add_argument("--latent", required=True, help="fitted latent model")
    p.add_argument("--out", required=True, help="network file (suffixed per seed)")
    p.add_argument("--config", default=None, help="TOML config ([network] and [loss])")
    p.add_argument("--loss", choices=LOSS_KINDS, default=None, help="override loss.kind")
    p.add_argument("--valid", default=None, help="validation records for early stopping")
    p.add_argument(
        "--universe",
        default=None,
        help="records sizing the id embeddings (default: the file split.json names)",
    )
    p.add_argument("--seeds", type=int, nargs="+", default=None)

    p = command("evaluate", run_evaluate, EvaluateArgs, "MAE/RMSE of trained networks")
    p.add_argument("--model", dest="models", action="append", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--latent", default=None, help="latent model (default: the one recorded)")
    p.add_argument("--out", default=None, help="write MetricReport CSV")
    p.add_argument("--method", default="r2sl")
    p.add_argument("--split", default="test")

    p = command("experiment", run_experiment_cmd, ExperimentArgs, "run an experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (default: experiment.output_dir)")
    p.add_argument("--workers", type=int, default=None)

    p = command("gate-stats", run_gate_stats, GateStatsArgs, "expert activation statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--records", default=None)
    p.add_argument("--latent", default=None)
    p.add_argument("--user", type=int, default=None)
    p.add_argument("--service", type=int, default=None)
    p.add_argument("--out", default=None, help="activation CSV")
    p.add_argument("--attribution", default=None, help="feature attribution CSV")

    p = command("synth", run_synth, SynthArgs, "synthesize records from a known latent model")
    p.add_argument("--spec", required=True, help="JSON synthetic spec")
    p.add_argument("--out", required=True, help="output directory")

    p = command("loss-curve", run_loss_curve, LossCurveArgs, "loss values over errors")
    p.add_argument("--errors", type=float, nargs="+", default=None)
    p.add_argument("--lo", type=float, default=-2.0)
    p.add_argument("--hi", type=float, default=2.0)
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--varsigma", type=float, default=0.5)
    p.add_argument("--psi", type=float, default=0.05)
    p.add_argument("--out", default=None)
    return ap


def setup_logging(verbose: int) -> None:
    env = os.getenv("R2SL_LOG_LEVEL")
    level = logging.WARNING
    if env:
        named = logging.getLevelName(env.strip().upper())
        if not isinstance(named, int):
            raise UsageError(f"R2SL_LOG_LEVEL: unknown level {env!r}")
        level = named
    level = max(logging.DEBUG, level - 10 * verbose)
    pkg = logging.getLogger("r2sl")
    pkg.setLevel(level)
    if not any(getattr(h, "_r2sl_cli", False) for h in pkg.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._r2sl_cli = True  # type: ignore[attr-defined]
        pkg.addHandler(handler)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        ns = vars(build_parser().parse_args(argv))
        setup_logging(ns.pop("verbose"))
        handler = ns.pop("handler")
        args_type = ns.pop("args_type")
        ns.pop("command")
        handler(args_type(**ns))
    except R2slError as e:
        print(f"r2sl: error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"r2sl: error: {e}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
