# tests/test_loss.py
from __future__ import annotations
import math
import numpy as np
import pytest

from r2sl.errors import ConfigError, DataError
from r2sl.loss import (
    LossSpec,
    MetricReport,
    aggregate_reports,
    huber,
    loss_curve,
    loss_node,
    mae,
    read_reports,
    rmse,
    s_huber,
    write_reports,
)
from r2sl.nncore import Param, backward


def test_s_huber_values():
    y = np.array([1.2, 1.0, 3.0])
    yhat = np.array([1.0, 1.0, 1.0])
    loss, _ = s_huber(y, yhat, 0.5, 0.05)
    assert loss == pytest.approx([0.02, 0.0, 0.04375])


def test_s_huber_boundary_takes_linear_branch():
    loss, grad = s_huber([0.5], [0.0], 0.5, 0.05)
    assert loss[0] == pytest.approx(0.00625)
    assert grad[0] == pytest.approx(-0.025)
    inside, _ = s_huber([0.4999999], [0.0], 0.5, 0.05)
    assert inside[0] == pytest.approx(0.125, rel=1e-5)


def test_huber_values():
    loss, grad = huber([18.0], [0.0], 0.5)
    assert loss[0] == pytest.approx(8.875)
    assert grad[0] == pytest.approx(-0.5)
    # the boundary point belongs to the quadratic branch
    edge, _ = huber([0.5], [0.0], 0.5)
    assert edge[0] == pytest.approx(0.125)


def test_s_huber_with_unit_psi_is_huber():
    rng = np.random.default_rng(0)
    y = rng.normal(scale=3.0, size=200)
    yhat = rng.normal(scale=3.0, size=200)
    a, ga = s_huber(y, yhat, 0.7, 1.0)
    b, gb = huber(y, yhat, 0.7)
    away = np.abs(np.abs(y - yhat) - 0.7) > 1e-9
    assert np.allclose(a[away], b[away])
    assert np.allclose(ga[away], gb[away])


@pytest.mark.parametrize("kind", ["s_huber", "huber", "mae", "mse"])
def test_gradients_match_finite_differences(kind):
    spec = LossSpec(kind, varsigma=0.5, psi=0.05)
    rng = np.random.default_rng(1)
    y = rng.uniform(0.0, 5.0, size=1000)
    yhat = rng.uniform(0.0, 5.0, size=1000)
    e = np.abs(y - yhat)
    keep = (np.abs(e - 0.5) > 1e-3) & (e > 1e-3)
    y, yhat = y[keep], yhat[keep]
    _, grad = spec.elementwise(y, yhat)
    h = 1e-6
    up, _ = spec.elementwise(y, yhat + h)
    down, _ = spec.elementwise(y, yhat - h)
    assert np.allclose(grad, (up - down) / (2 * h), rtol=1e-5, atol=1e-6)


def test_metrics():
    y = [1.0, 3.0]
    yhat = [2.0, 3.0]
    assert mae(y, yhat) == pytest.approx(0.5)
    assert rmse(y, yhat) == pytest.approx(0.70710678)
    rng = np.random.default_rng(2)
    a = rng.normal(size=50)
    b = rng.normal(size=50)
    assert mae(a, b) <= rmse(a, b)
    with pytest.raises(DataError, match="empty"):
        mae([], [])
    with pytest.raises(DataError, match="empty"):
        rmse([], [])
    with pytest.raises(ValueError, match="shape"):
        mae([1.0], [1.0, 2.0])


def test_loss_spec_validation_and_labels():
    with pytest.raises(ConfigError, match="loss.kind"):
        LossSpec("l1")
    with pytest.raises(ConfigError, match="varsigma"):
        LossSpec(varsigma=0.0)
    with pytest.raises(ConfigError, match="psi"):
        LossSpec(psi=-1.0)
    assert LossSpec().label == "s_huber(varsigma=0.5, psi=0.05)"
    assert LossSpec("huber", varsigma=2.0).label == "huber(delta=2)"
    assert LossSpec("mse").label == "mse"
    with pytest.raises(DataError, match="empty batch"):
        LossSpec().batch([], [])


def test_loss_node_backward_is_mean_gradient():
    pred = Param("pred", np.array([0.0, 1.0, 4.0]))
    y = np.array([1.0, 1.0, 1.0])
    node = loss_node(LossSpec("mse"), pred, y)
    assert float(node.value) == pytest.approx((1.0 + 0.0 + 9.0) / 3)
    backward(node)
    assert pred.grad == pytest.approx(-2.0 * (y - pred.value) / 3)


def test_reports_round_trip(tmp_path):
    reports = [
        MetricReport.evaluate("r2sl", "test", 0, [1.0, 3.0], [2.0, 3.0]),
        MetricReport.failed("upcc", "test", 0),
    ]
    assert reports[0].ok and reports[0].n == 2
    assert not reports[1].ok
    p = tmp_path / "runs.csv"
    write_reports(p, reports)
    assert p.read_text(encoding="utf-8").splitlines()[0] == "method,split,seed,mae,rmse,n"
    back = read_reports(p)
    assert back[0] == reports[0]
    assert back[1].method == "upcc" and math.isnan(back[1].mae) and back[1].n == 0


def test_read_reports_rejects_bad_files(tmp_path):
    p = tmp_path / "runs.csv"
    p.write_text("method,seed,mae\nr2sl,0,1.0\n", encoding="utf-8")
    with pytest.raises(DataError, match="expected header"):
        read_reports(p)
    p.write_text("method,split,seed,mae,rmse,n\nr2sl,test,zero,1.0,1.0,3\n", encoding="utf-8")
    with pytest.raises(DataError, match="bad report row") as e:
        read_reports(p)
    assert e.value.line == 2


def test_aggregate_reports():
    rows = [
        MetricReport("r2sl", "test", 0, 1.0, 2.0, 10),
        MetricReport("r2sl", "test", 1, 3.0, 4.0, 10),
        MetricReport.failed("r2sl", "test", 2),
        MetricReport("upcc", "test", 0, 5.0, 6.0, 10),
        MetricReport.failed("mean", "test", 0),
    ]
    agg = {(a.method, a.split): a for a in aggregate_reports(rows)}
    assert list(agg) == [("r2sl", "test"), ("upcc", "test"), ("mean", "test")]
    r = agg[("r2sl", "test")]
    assert r.n_seeds == 2
    assert r.mae_mean == pytest.approx(2.0)
    assert r.mae_std == pytest.approx(math.sqrt(2.0))
    assert r.rmse_mean == pytest.approx(3.0)
    single = agg[("upcc", "test")]
    assert single.n_seeds == 1 and single.mae_std == 0.0
    dead = agg[("mean", "test")]
    assert dead.n_seeds == 0 and math.isnan(dead.mae_mean)


def test_loss_curve():
    specs = [LossSpec(), LossSpec("huber"), LossSpec("mse")]
    rows = loss_curve([0.0, 2.0], specs)
    assert len(rows) == 2
    assert set(rows[1]) == {"error"} | {s.label for s in specs}
    assert rows[1]["error"] == 2.0
    assert rows[1][specs[0].label] == pytest.approx(0.04375)
    assert rows[1]["huber(delta=0.5)"] == pytest.approx(0.875)
    assert rows[1]["mse"] == pytest.approx(4.0)


def test_s_huber_down_weights_large_errors():
    e = np.linspace(0.5, 20.0, 40)
    zeros = np.zeros_like(e)
    small, _ = s_huber(e, zeros, 0.5, 0.05)
    full, _ = huber(e, zeros, 0.5)
    assert np.all(small < full)
