# tests/test_experiment.py
from __future__ import annotations
import dataclasses
import json
import logging
import math
import pytest

from r2sl import experiment
from r2sl.api import write_records
from r2sl.config import config_from_mapping
from r2sl.dataset import write_codebooks
from r2sl.errors import ConfigError
from r2sl.experiment import (
    Dataset,
    ablation_rows,
    cache_path,
    grid_cells,
    load_dataset,
    method_variant,
    run_experiment,
    summary_table,
)
from r2sl.loss import AggregateReport, read_reports
from r2sl.types import Codebooks

SYNTH = {
    "m": 2, "n_users": 20, "n_services": 25, "n_user_cities": 3, "n_user_as": 4,
    "n_service_cities": 3, "n_service_as": 4, "n_records": 300, "seed": 3,
    "w": 5.0, "eta": 2.5, "value_cap": 20.0, "random": {},
}


def _config(methods, **experiment):
    return config_from_mapping(
        {
            "data": {"synth": SYNTH},
            "split": {"densities": [0.3, 0.5], "valid_frac": 0.1},
            "latent": {"m": 2, "max_iters": 3},
            "network": {
                "embed_dim": 4, "hidden": 4, "gate_hidden": 4, "n_task_experts": 1,
                "n_domain_experts": 2, "top_k": 2, "decoder_v": 3, "epochs": 1,
                "batch_size": 64,
            },
            "experiment": dict({"methods": methods, "seeds": [0, 1]}, **experiment),
        }
    )


def test_method_variants():
    cfg = _config(["r2sl"])
    assert method_variant("upcc", cfg).kind == "upcc"
    assert method_variant("mean_user", cfg).mean_level == "user"
    assert method_variant("r2sl_dense_gate", cfg).network.dense_gate
    assert method_variant("r2sl_no_virtual", cfg).network.feature_mask == "no_virtual"
    assert method_variant("r2sl_mae", cfg).loss.kind == "mae"
    psi = method_variant("r2sl_psi_0.2", cfg).loss
    assert psi.kind == "s_huber" and psi.psi == 0.2
    with pytest.raises(ConfigError):
        method_variant("pmf", cfg)


def test_grid_and_reuse_of_cached_latent_models(tmp_path, caplog):
    cfg = _config(["r2sl", "mean"])
    assert len(grid_cells(cfg)) == 4
    with caplog.at_level(logging.INFO, logger="r2sl.experiment"):
        first = run_experiment(cfg, tmp_path)
    assert len(first.reports) == 8
    assert all(r.ok for r in first.reports)
    assert [(r.split, r.seed, r.method) for r in first.reports[:2]] == [
        ("0.3", 0, "r2sl"), ("0.3", 0, "mean"),
    ]
    assert len(first.latent_paths) == 4
    assert caplog.text.count("latent cache miss") == 4

    caplog.clear()
    with caplog.at_level(logging.INFO, logger="r2sl.experiment"):
        second = run_experiment(cfg, tmp_path)
    assert "latent cache miss" not in caplog.text
    assert caplog.text.count("latent cache hit") == 4
    for a, b in zip(first.reports, second.reports):
        assert (a.method, a.split, a.seed, a.n) == (b.method, b.split, b.seed, b.n)
        assert a.mae == pytest.approx(b.mae, rel=1e-9)

    assert read_reports(tmp_path / "results.csv") == list(first.reports)
    summary = (tmp_path / "summary.md").read_text(encoding="utf-8")
    assert summary.splitlines()[0] == "| method | MAE @ 0.3 | RMSE @ 0.3 | MAE @ 0.5 | RMSE @ 0.5 |"
    assert not (tmp_path / "ablation.csv").exists()

    manifest = json.loads((tmp_path / "run.json").read_text(encoding="utf-8"))
    assert manifest["schema"] == "r2sl.run"
    assert manifest["rows"] == 8 and manifest["cells"] == 4 and manifest["failed"] == 0
    assert manifest["ablation"] is None
    assert manifest["config_hash"] == cfg.snapshot_hash()
    assert len(manifest["activation"]) == 8
    for rel in manifest["activation"] + manifest["latent_models"]:
        assert (tmp_path / rel).is_file()
    assert set(json.loads((tmp_path / "timings.json").read_text(encoding="utf-8"))) == {
        "d0.3_s0", "d0.3_s1", "d0.5_s0", "d0.5_s1",
    }


def test_ablation_output(tmp_path):
    cfg = _config(["r2sl", "r2sl_no_latent"], seeds=[0])
    artifact = run_experiment(cfg, tmp_path)
    assert "ablation.csv" in artifact.files
    lines = (tmp_path / "ablation.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "method,split,n_seeds,mae_mean,mae_std,rmse_mean,rmse_std,mae_vs_full"
    assert len(lines) == 1 + 2 * 2
    full = [line for line in lines[1:] if line.startswith("r2sl,")]
    assert all(line.endswith(",1.0") for line in full)


def test_cache_path_keys_on_records_and_latent_config(tmp_path, records):
    cfg = _config(["r2sl"]).latent
    path = cache_path(tmp_path, records, cfg)
    assert path == cache_path(tmp_path, records, cfg)
    assert path != cache_path(tmp_path, records, dataclasses.replace(cfg, seed=1))
    assert path != cache_path(tmp_path, records.subset([0, 1, 2]), cfg)
    assert path.name.startswith(f"latent-{records.fingerprint()[:16]}-")


def test_summary_and_ablation_rows():
    aggs = [
        AggregateReport("r2sl", "0.05", 2, 0.5, 0.1, 1.0, 0.2),
        AggregateReport("r2sl_no_latent", "0.05", 2, 0.75, 0.1, 1.5, 0.2),
        AggregateReport("upcc", "0.05", 0, math.nan, math.nan, math.nan, math.nan),
    ]
    table = summary_table(aggs, ["r2sl", "upcc"]).splitlines()
    assert table[2] == "| r2sl | 0.5000 ± 0.1000 | 1.0000 ± 0.2000 |"
    assert table[3] == "| upcc | failed | failed |"
    rows = ablation_rows(aggs)
    assert [r["method"] for r in rows] == ["r2sl", "r2sl_no_latent"]
    assert float(rows[1]["mae_vs_full"]) == pytest.approx(1.5)


def test_load_dataset_subsamples_and_renumbers():
    cfg = config_from_mapping(
        {"data": {"synth": SYNTH, "subsample_users": 5, "subsample_services": 6}}
    )
    data = load_dataset(cfg.data)
    assert isinstance(data, Dataset)
    assert data.records.user_id.max() < 5
    assert data.records.service_id.max() < 6
    again = load_dataset(cfg.data)
    assert again.records.equals(data.records)


def test_load_dataset_reads_the_configured_codebooks(tmp_path, synth):
    write_records(tmp_path / "records.csv", synth.records)
    wider = Codebooks.numbered({k: n + 2 for k, n in synth.codebooks.sizes().items()})
    (tmp_path / "books").mkdir()
    write_codebooks(tmp_path / "books" / "regions.json", wider)
    cfg = config_from_mapping(
        {"data": {"records": "records.csv", "codebooks": "books/regions.json"}}, tmp_path
    )
    assert load_dataset(cfg.data).codebooks == wider
    # without the key, codebooks.json beside the records (absent here) or inference
    plain = config_from_mapping({"data": {"records": "records.csv"}}, tmp_path)
    assert load_dataset(plain.data).codebooks == Codebooks.infer(synth.records)


def test_unexpected_errors_fail_only_their_method(tmp_path, monkeypatch, caplog):
    def broken(*args, **kwargs):
        raise FloatingPointError("overflow in similarity")

    monkeypatch.setattr(experiment, "upcc_fit", broken)
    cfg = _config(["upcc", "mean"], seeds=[0])
    with caplog.at_level(logging.ERROR, logger="r2sl.experiment"):
        artifact = run_experiment(cfg, tmp_path)
    by_method = {}
    for r in artifact.reports:
        by_method.setdefault(r.method, []).append(r.ok)
    assert by_method == {"upcc": [False, False], "mean": [True, True]}
    assert "upcc failed: overflow in similarity" in caplog.text
    manifest = json.loads((tmp_path / "run.json").read_text(encoding="utf-8"))
    assert manifest["failed"] == 2


def test_reruns_write_identical_files(tmp_path):
    cfg = _config(["r2sl", "upcc"], seeds=[0])
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("results.csv", "summary.md", "run.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.slow
def test_regional_model_beats_the_baselines_on_synthetic_data(tmp_path):
    cfg = config_from_mapping(
        {
            "data": {
                "synth": {
                    "m": 3, "n_users": 120, "n_services": 150, "n_user_cities": 6,
                    "n_user_as": 8, "n_service_cities": 6, "n_service_as": 8,
                    "n_records": 9000, "seed": 11, "w": 10.0, "eta": 2.5,
                    "value_cap": 20.0, "c_u": [0.3, 1.0, 3.0], "c_s": [0.3, 1.0, 3.0],
                    "random": {},
                },
            },
            "split": {"densities": [0.3], "valid_frac": 0.1},
            "latent": {"m": 3, "eta": 2.5, "w_init": 10.0, "max_iters": 100},
            "network": {"epochs": 40, "patience": 8, "batch_size": 128},
            "experiment": {"methods": ["r2sl", "upcc", "mean"], "seeds": [0]},
        }
    )
    mae = {r.method: r.mae for r in run_experiment(cfg, tmp_path).reports}
    assert mae["r2sl"] < mae["mean"]
    assert mae["r2sl"] < mae["upcc"]
