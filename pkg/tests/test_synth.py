# tests/test_synth.py
from __future__ import annotations
import math
import numpy as np
import pytest

from r2sl.dataset import SynthSpec, synthesize
from r2sl.errors import ConfigError

from conftest import small_spec


def test_synthesize_shapes_and_ranges(synth):
    spec = synth.spec
    r = synth.records
    assert len(r) == spec.n_records == 300
    pairs = r.user_id * spec.n_services + r.service_id
    assert len(np.unique(pairs)) == len(r)
    assert np.all(r.value > 0)
    assert np.all(r.value <= spec.value_cap)
    assert synth.states.shape == (300, 2)
    assert synth.states.min() >= 0 and synth.states.max() < spec.m
    synth.codebooks.check(r)


def test_region_codes_are_per_object(synth):
    r = synth.records
    for ids, col in ((r.user_id, r.user_city), (r.user_id, r.user_as)):
        for uid in np.unique(ids):
            assert len(np.unique(col[ids == uid])) == 1
    for ids, col in ((r.service_id, r.service_city), (r.service_id, r.service_as)):
        for sid in np.unique(ids):
            assert len(np.unique(col[ids == sid])) == 1


def test_synthesize_is_deterministic():
    a = synthesize(small_spec(seed=5))
    b = synthesize(small_spec(seed=5))
    c = synthesize(small_spec(seed=6))
    assert a.records.equals(b.records)
    assert np.array_equal(a.states, b.states)
    assert not a.records.equals(c.records)


def test_values_follow_the_scored_piecewise_density():
    # equal means in both states, so every record shares one density
    spec = SynthSpec.random(
        m=2, n_users=40, n_services=40, n_user_cities=2, n_user_as=2,
        n_service_cities=2, n_service_as=2, n_records=1500, seed=2,
        c_u=[1.0, 1.0], c_s=[1.0, 1.0], w=3.0, eta=1.0, value_cap=1e9,
    )
    r = synthesize(spec).records
    head_mass = 1.0 - math.exp(-1.0)
    tail_mass = math.exp(-1.0 / 3.0)
    tail = r.value[r.value >= 1.0]
    head = r.value[r.value < 1.0]
    assert len(tail) / len(r) == pytest.approx(tail_mass / (head_mass + tail_mass), abs=0.05)
    # memoryless tail: offsets past eta are Exp(mean 3)
    assert np.mean(tail - 1.0) == pytest.approx(3.0, rel=0.15)
    # Exp(1) truncated to [0, 1)
    assert np.mean(head) == pytest.approx(1.0 - 1.0 / (math.e - 1.0), abs=0.05)


def test_single_state_mean_is_the_product_of_complexity_factors():
    spec = SynthSpec.random(
        m=1, n_users=400, n_services=400, n_user_cities=1, n_user_as=1,
        n_service_cities=1, n_service_as=1, n_records=100_000, seed=0,
        c_u=[2.0], c_s=[3.0], value_cap=math.inf,
    )
    v = synthesize(spec).records.value
    se = v.std() / math.sqrt(len(v))
    assert abs(v.mean() - 6.0) < 3 * se


def test_spec_validation():
    base = small_spec().to_dict()
    bad = dict(base, theta_u=np.full((2, 3), 0.4).tolist())
    with pytest.raises(ConfigError, match="theta_u columns must sum to 1"):
        SynthSpec.from_dict(bad)
    with pytest.raises(ConfigError, match="shape"):
        SynthSpec.from_dict(dict(base, delta_s=[[1.0], [0.0]]))
    with pytest.raises(ConfigError, match="positive"):
        SynthSpec.from_dict(dict(base, c_u=[1.0, -1.0]))
    with pytest.raises(ConfigError, match="pairs exist"):
        SynthSpec.from_dict(dict(base, n_records=20 * 25 + 1))
    with pytest.raises(ConfigError, match="bad synthetic spec"):
        SynthSpec.from_dict(dict(base, colour="blue"))


def test_spec_dict_round_trip_reproduces_records():
    spec = small_spec()
    again = SynthSpec.from_dict(spec.to_dict())
    assert synthesize(again).records.equals(synthesize(spec).records)


def test_spec_from_counts_with_random_truth():
    obj = {
        "m": 3, "n_users": 10, "n_services": 12, "n_user_cities": 2, "n_user_as": 3,
        "n_service_cities": 2, "n_service_as": 2, "n_records": 50, "seed": 1,
        "random": {"concentration": 0.5, "floor": 0.05},
    }
    spec = SynthSpec.from_dict(obj)
    assert spec.theta_u.shape == (3, 2)
    assert spec.eta == math.inf
    assert np.allclose(spec.delta_u.sum(axis=0), 1.0)
    assert np.all(spec.delta_u >= 0.05 / 3 - 1e-12)
    assert len(synthesize(spec).records) == 50
