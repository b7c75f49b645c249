# tests/test_model.py
from __future__ import annotations
import json
import numpy as np
import pytest

from r2sl.errors import ConfigError, DataError
from r2sl.latent import LatentConfig, RegionalLatentModel
from r2sl.loss import LossSpec, loss_node
from r2sl.model import (
    NetworkConfig,
    R2slNetwork,
    activation_stats,
    encode_records,
    load_network,
    network_summary,
    save_network,
    write_activation_csv,
)
from r2sl.model.network import top_k_mask
from r2sl.nncore import grad_check

from conftest import random_requests


def test_network_config_validation():
    cfg = NetworkConfig(n_task_experts=2, n_domain_experts=3, top_k=2, decoder_v=5)
    assert cfg.n_experts == 5
    assert cfg.decoder_widths == (32, 16, 8, 1)
    assert [cfg.expert_kind(i) for i in range(5)] == [
        "task", "task", "physical", "virtual", "physical",
    ]
    assert cfg.latent_mask().tolist() == [1.0, 1.0, 1.0, 1.0]
    assert cfg.replace(feature_mask="no_physical").latent_mask().tolist() == [0.0, 1.0, 0.0, 1.0]
    assert cfg.replace(feature_mask="no_virtual").latent_mask().tolist() == [1.0, 0.0, 1.0, 0.0]
    assert cfg.replace(dense_gate=True).active_experts == 5
    with pytest.raises(ConfigError, match="top_k"):
        NetworkConfig(n_task_experts=1, n_domain_experts=1, top_k=3)
    with pytest.raises(ConfigError, match="feature_mask"):
        NetworkConfig(feature_mask="no_cities")
    with pytest.raises(ConfigError, match="decoder_v"):
        NetworkConfig(decoder_v=1)
    with pytest.raises(ConfigError, match="at least one expert"):
        NetworkConfig(n_task_experts=0, n_domain_experts=0, top_k=1)
    with pytest.raises(ConfigError, match="unknown network settings"):
        NetworkConfig.from_dict({"experts": 3})


def test_init_is_seeded(tiny_network, sizes):
    a = R2slNetwork.init(tiny_network, sizes).state()
    b = R2slNetwork.init(tiny_network, sizes).state()
    c = R2slNetwork.init(tiny_network.replace(seed=1), sizes).state()
    assert set(a) == set(b)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)
    assert a["emb.user_id"].shape == (sizes.n_users, 4)
    assert a["expert.0.fuse.w"].shape == (4, 40)  # task expert reads 10 vectors
    assert a["expert.1.fuse.w"].shape == (4, 8)
    assert np.all(a["expert.2.w_out"] == 0.5)
    assert a["dec.0.w"].shape == (8, 3 * 4)
    assert a["dec.3.w"].shape == (1, 2)


def test_forward_shapes(tiny_network, sizes, records, latent_model):
    net = R2slNetwork.init(tiny_network, sizes)
    out = net.forward(encode_records(records.subset(np.arange(10)), latent_model))
    assert out.prediction.shape == (10,)
    assert len(out.experts) == 3
    assert all(e.shape == (10, 4) for e in out.experts)
    assert np.allclose(out.gate.raw.sum(axis=1), 1.0)
    assert "experts [task,physical,virtual]" in network_summary(net)


def test_top_k_mask_breaks_ties_by_index():
    raw = np.array([[0.25, 0.25, 0.25, 0.25], [0.1, 0.4, 0.1, 0.4]])
    assert top_k_mask(raw, 2).tolist() == [
        [True, True, False, False],
        [False, True, False, True],
    ]


def test_gate_is_sparse_and_renormalized(sizes, latent_model):
    cfg = NetworkConfig(
        embed_dim=4, hidden=4, gate_hidden=4, n_task_experts=2, n_domain_experts=2,
        top_k=2, decoder_v=3, latent_m=2,
    )
    net = R2slNetwork.init(cfg, sizes)
    requests = random_requests(sizes, 1000)
    gate = net.gate_decisions(requests, latent_model)
    assert np.all(gate.active_mask.sum(axis=1) == 2)
    assert np.allclose(gate.sparse.sum(axis=1), 1.0)
    assert np.all(gate.sparse[~gate.active_mask] == 0.0)
    kept = np.where(gate.active_mask, gate.raw, 0.0)
    assert np.allclose(gate.sparse, kept / kept.sum(axis=1, keepdims=True))


def test_inactive_experts_do_not_affect_predictions(sizes, latent_model):
    cfg = NetworkConfig(
        embed_dim=4, hidden=4, gate_hidden=4, n_task_experts=2, n_domain_experts=2,
        top_k=2, decoder_v=3, latent_m=2,
    )
    net = R2slNetwork.init(cfg, sizes)
    # wider id embeddings so the gate picks different experts for different requests
    for name in ("emb.user_id", "emb.service_id"):
        net.params[name].value *= 30.0
    requests = random_requests(sizes, 1000, seed=1)
    base = net.predict(requests, latent_model)
    mask = net.gate_decisions(requests, latent_model).active_mask
    rng = np.random.default_rng(5)
    for i in range(cfg.n_experts):
        saved = net.state()
        for name, p in net.params.items():
            if name.startswith(f"expert.{i}."):
                p.value += rng.normal(size=p.shape)
        moved = net.predict(requests, latent_model)
        net.load_state(saved)
        inactive = ~mask[:, i]
        assert np.array_equal(moved[inactive], base[inactive])
        if (~inactive).any():
            assert not np.array_equal(moved[~inactive], base[~inactive])
    # top-2 of 4: every request leaves two experts out
    assert np.all((~mask).sum(axis=1) == 2)


def test_dense_gate_uses_every_expert(tiny_network, sizes, records, latent_model):
    net = R2slNetwork.init(tiny_network.replace(dense_gate=True), sizes)
    gate = net.gate_decisions(records, latent_model)
    assert gate.active_mask.all()
    assert np.array_equal(gate.sparse, gate.raw)


def test_latent_ablation_ignores_latent_model(tiny_network, sizes, records, latent_model):
    other = RegionalLatentModel.uniform(
        latent_model.sizes(), LatentConfig(m=2), c_u=[1.0, 2.0], c_s=[1.0, 2.0]
    )
    blind = R2slNetwork.init(tiny_network.replace(feature_mask="no_latent"), sizes)
    assert np.array_equal(blind.predict(records, latent_model), blind.predict(records, other))
    full = R2slNetwork.init(tiny_network, sizes)
    assert not np.array_equal(full.predict(records, latent_model), full.predict(records, other))


def test_check_latent_state_count(tiny_network, sizes, synth):
    net = R2slNetwork.init(tiny_network, sizes)
    three = RegionalLatentModel.uniform(synth.codebooks.sizes(), LatentConfig(m=3))
    with pytest.raises(ConfigError, match="m=2"):
        net.predict(synth.records, three)


@pytest.mark.parametrize("dense_gate", [False, True])
def test_end_to_end_gradients(tiny_network, sizes, records, latent_model, dense_gate):
    net = R2slNetwork.init(tiny_network.replace(dense_gate=dense_gate), sizes)
    batch = encode_records(records.subset(np.arange(8)), latent_model)
    y = records.value[:8]
    spec = LossSpec("mse")

    def closure():
        return loss_node(spec, net.forward(batch).prediction, y)

    report = grad_check(closure, net.parameters(), tolerance=1e-4)
    assert report.passed, f"{report.worst}: {report.max_rel_error:.3g}"


def test_save_and_load_network(tmp_path, tiny_network, sizes, records, latent_model):
    net = R2slNetwork.init(tiny_network, sizes)
    p = tmp_path / "net.json"
    save_network(p, net, latent_model, latent_path="latent.json", loss={"kind": "mse"})
    doc = load_network(p)
    doc.check_latent(latent_model)
    assert doc.latent_path == "latent.json"
    assert doc.resolve_latent_path(tmp_path) == tmp_path / "latent.json"
    assert doc.loss == {"kind": "mse"}
    assert doc.history is None
    assert np.array_equal(
        doc.network.predict(records, latent_model), net.predict(records, latent_model)
    )

    other = latent_model.replace(w=latent_model.w * 2)
    with pytest.raises(DataError, match="differs from the one the network was trained with"):
        doc.check_latent(other)


def test_load_network_rejects_bad_documents(tmp_path, tiny_network, sizes, latent_model):
    net = R2slNetwork.init(tiny_network, sizes)
    p = tmp_path / "net.json"
    save_network(p, net, latent_model)
    doc = json.loads(p.read_text(encoding="utf-8"))

    p.write_text(json.dumps(dict(doc, schema="r2sl.latent")), encoding="utf-8")
    with pytest.raises(DataError, match="not a network document"):
        load_network(p)

    params = dict(doc["params"])
    params.pop("gate.l1.b")
    p.write_text(json.dumps(dict(doc, params=params)), encoding="utf-8")
    with pytest.raises(DataError, match="malformed network document"):
        load_network(p)

    params = dict(doc["params"], extra={"shape": [1], "data": [(1.0).hex()]})
    p.write_text(json.dumps(dict(doc, params=params)), encoding="utf-8")
    with pytest.raises(DataError, match="do not match"):
        load_network(p)

    p.write_text("not json", encoding="utf-8")
    with pytest.raises(DataError, match="bad JSON"):
        load_network(p)


def test_activation_stats(tmp_path, sizes, records, latent_model):
    cfg = NetworkConfig(
        embed_dim=4, hidden=4, gate_hidden=4, n_task_experts=1, n_domain_experts=2,
        top_k=1, decoder_v=3, latent_m=2,
    )
    net = R2slNetwork.init(cfg, sizes)
    report = activation_stats(records, latent_model, net)
    rates = [e.activation_rate for e in report.experts]
    weights = [e.mean_weight for e in report.experts]
    assert sum(rates) == pytest.approx(1.0)
    assert sum(weights) == pytest.approx(1.0)
    assert [e.expert_kind for e in report.experts] == ["task", "physical", "virtual"]
    # the task expert reads every group
    assert report.attribution["known"] == pytest.approx(weights[0])
    assert report.attribution["physical"] == pytest.approx(weights[0] + weights[1])
    assert report.attribution["virtual"] == pytest.approx(weights[0] + weights[2])

    out = tmp_path / "activation.csv"
    write_activation_csv(out, report)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "expert_id,expert_kind,mean_weight,activation_rate"
    assert len(lines) == 4

    dense = R2slNetwork.init(cfg.replace(dense_gate=True), sizes)
    dense_report = activation_stats(records, latent_model, dense)
    assert all(e.activation_rate == 1.0 for e in dense_report.experts)
