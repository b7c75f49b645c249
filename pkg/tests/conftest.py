# tests/conftest.py
from __future__ import annotations
from pathlib import Path

import numpy as np
import pytest

from r2sl.dataset import SynthResult, SynthSpec, synthesize
from r2sl.latent import LatentConfig, RegionalLatentModel, fit
from r2sl.model import NetworkConfig
from r2sl.types import RecordSet, TableSizes

# 4 users x 5 services; -1 is missing, 25.0 is over the response-time cap and
# 0 is non-positive, so 12 records survive.
MINIMAL_MATRIX = """\
0.5\t-1\t1.2\t25.0\t0.8
-1\t2.0\t0\t0.3\t-1
1.5\t1.5\t-1\t-1\t3.0
0.2\t-1\t4.0\t0.9\t1.1
"""

# WS-Dream userlist layout, header and rule line included.
MINIMAL_USERS = """\
[User ID]\t[IP Address]\t[Country]\t[IP No.]\t[AS]\t[Latitude]\t[Longitude]
=======================================================================
0\t12.108.127.138\tUnited States\t208437130\tAS7018\t38\t-97
1\t133.11.0.1\tJapan\t2232090625\tAS2497\t35.69\t139.69
2\t12.46.129.15\tUnited States\t204374287\tAS7018\t38\t-97
3\t141.20.1.3\tGermany\t2366898435\tAS3320\t52.52\t13.41
"""

# Plain three-column metadata without a header.
MINIMAL_SERVICES = """\
0\tBerlin\tAS3320
1\tTokyo\tAS2497
2\tBerlin\tAS3320
3\tDallas\tAS7018
4\tTokyo\tAS2516
"""


@pytest.fixture
def wsdream_files(tmp_path: Path) -> tuple[Path, Path, Path]:
    matrix = tmp_path / "rtMatrix.txt"
    users = tmp_path / "userlist.txt"
    services = tmp_path / "wslist.txt"
    matrix.write_text(MINIMAL_MATRIX, encoding="utf-8")
    users.write_text(MINIMAL_USERS, encoding="utf-8")
    services.write_text(MINIMAL_SERVICES, encoding="utf-8")
    return matrix, users, services


def small_spec(seed: int = 3, n_records: int = 300) -> SynthSpec:
    return SynthSpec.random(
        m=2,
        n_users=20,
        n_services=25,
        n_user_cities=3,
        n_user_as=4,
        n_service_cities=3,
        n_service_as=4,
        n_records=n_records,
        seed=seed,
        w=5.0,
        eta=2.5,
        value_cap=20.0,
    )


@pytest.fixture
def synth() -> SynthResult:
    return synthesize(small_spec())


@pytest.fixture
def records(synth: SynthResult) -> RecordSet:
    return synth.records


@pytest.fixture
def sizes(synth: SynthResult) -> TableSizes:
    return TableSizes.from_records(synth.records, synth.codebooks)


@pytest.fixture
def latent_config() -> LatentConfig:
    return LatentConfig(m=2, eta=2.5, w_init=5.0, max_iters=5, seed=0)


@pytest.fixture
def latent_model(synth: SynthResult, latent_config: LatentConfig) -> RegionalLatentModel:
    return fit(synth.records, synth.codebooks, latent_config)


@pytest.fixture
def tiny_network() -> NetworkConfig:
    return NetworkConfig(
        embed_dim=4,
        hidden=4,
        gate_hidden=4,
        n_task_experts=1,
        n_domain_experts=2,
        top_k=2,
        decoder_v=3,
        latent_m=2,
        epochs=2,
        batch_size=32,
        patience=2,
        learning_rate=5e-3,
    )


def random_requests(sizes: TableSizes, n: int, seed: int = 0) -> RecordSet:
    """Arbitrary (user, service, region) combinations within the table sizes."""
    rng = np.random.default_rng(seed)
    return RecordSet(
        user_id=rng.integers(sizes.n_users, size=n),
        service_id=rng.integers(sizes.n_services, size=n),
        value=rng.uniform(0.1, 5.0, size=n),
        user_city=rng.integers(sizes.n_user_city, size=n),
        user_as=rng.integers(sizes.n_user_as, size=n),
        service_city=rng.integers(sizes.n_service_city, size=n),
        service_as=rng.integers(sizes.n_service_as, size=n),
    )
