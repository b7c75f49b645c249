#
# Synthetic QoS records drawn from the regional latent-state generative model.
#
# For a record (u, s):
#   user state j    ~ normalize(theta_u[:, city(u)] * delta_u[:, as(u)])
#   service state k ~ normalize(theta_s[:, city(s)] * delta_s[:, as(s)])
#   T has density proportional to Exp(mean c_u[j] * c_s[k]) below eta and to
#   Exp(mean c_u[j] * c_s[k] * w) from eta on (the penalised tail branch), the same
#   piecewise density the latent fit scores. Past eta that is eta + Exp(mean * w).
#   T > value_cap is rejected and redrawn.
#

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ConfigError, DataError
from ..nncore.rng import make_rng
from ..types import Codebooks, FloatArray, IntArray, RecordSet

log = logging.getLogger(__name__)

COLUMN_TOL = 1e-9
MAX_REDRAW_ROUNDS = 1000

_MATRICES = (
    ("theta_u", "n_user_cities"),
    ("theta_s", "n_service_cities"),
    ("delta_u", "n_user_as"),
    ("delta_s", "n_service_as"),
)


def _stochastic(name: str, mat: FloatArray, m: int, cols: int) -> None:
    if mat.shape != (m, cols):
        raise ConfigError(f"{name} must have shape ({m}, {cols}), got {mat.shape}")
    if np.any(mat < 0) or not np.all(np.isfinite(mat)):
        raise ConfigError(f"{name} has negative or non-finite entries")
    err = np.abs(mat.sum(axis=0) - 1.0)
    if np.any(err > COLUMN_TOL):
        raise ConfigError(f"{name} columns must sum to 1 (off by {float(err.max())!r})")


@dataclass(frozen=True, eq=False)
class SynthSpec:
    m: int
    n_users: int
    n_services: int
    n_user_cities: int
    n_user_as: int
    n_service_cities: int
    n_service_as: int
    theta_u: FloatArray
    theta_s: FloatArray
    delta_u: FloatArray
    delta_s: FloatArray
    c_u: FloatArray
    c_s: FloatArray
    w: float
    eta: float
    n_records: int
    seed: int
    value_cap: float = 20.0
    region_seed: int = field(default=-1)

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        for name, _ in _MATRICES:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("c_u", "c_s"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.m,) or np.any(arr <= 0):
                raise ConfigError(f"{name} must be {self.m} positive values")
            object.__setattr__(self, name, arr)
        for name, count in _MATRICES:
            _stochastic(name, getattr(self, name), self.m, getattr(self, count))
        if not self.w > 0:
            raise ConfigError("w must be positive")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not self.value_cap > 0:
            raise ConfigError("value_cap must be positive")
        if self.n_records > self.n_users * self.n_services:
            raise ConfigError(
                f"{self.n_records} records requested but only "
                f"{self.n_users * self.n_services} user/service pairs exist"
            )
        if self.region_seed < 0:
            object.__setattr__(self, "region_seed", self.seed)

    @classmethod
    def random(
        cls,
        *,
        m: int,
        n_users: int,
        n_services: int,
        n_user_cities: int,
        n_user_as: int,
        n_service_cities: int,
        n_service_as: int,
        n_records: int,
        seed: int,
        c_u: Any = None,
        c_s: Any = None,
        w: float = 50.0,
        eta: float = math.inf,
        value_cap: float = 20.0,
        concentration: float = 0.3,
        floor: float = 0.02,
    ) -> SynthSpec:
        """Ground truth with Dirichlet(concentration) columns mixed with a uniform floor."""
        rng = make_rng(seed, 1)

        def dist(cols: int) -> FloatArray:
            d = rng.dirichlet(np.full(m, concentration), size=cols).T
            return (1.0 - floor) * d + floor / m

        mats = {name: dist(n) for name, n in (
            ("theta_u", n_user_cities),
            ("theta_s", n_service_cities),
            ("delta_u", n_user_as),
            ("delta_s", n_service_as),
        )}
        spread = np.geomspace(0.5, 2.0, m) if m > 1 else np.ones(1)
        return cls(
            m=m,
            n_users=n_users,
            n_services=n_services,
            n_user_cities=n_user_cities,
            n_user_as=n_user_as,
            n_service_cities=n_service_cities,
            n_service_as=n_service_as,
            c_u=spread if c_u is None else c_u,
            c_s=spread if c_s is None else c_s,
            w=w,
            eta=eta,
            n_records=n_records,
            seed=seed,
            value_cap=value_cap,
            **mats,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> SynthSpec:
        """Full spec, or counts plus `random: {concentration, floor}` for a drawn truth."""
        obj = dict(obj)
        rnd = obj.pop("random", None)
        if rnd is not None:
            return cls.random(**obj, **dict(rnd))
        try:
            return cls(**obj)
        except TypeError as e:
            raise ConfigError(f"bad synthetic spec: {e}") from None


@dataclass(frozen=True, eq=False)
class SynthResult:
    records: RecordSet
    states: IntArray  # (n, 2): hidden (user state j, service state k) per record
    codebooks: Codebooks
    spec: SynthSpec


def _draw_states(rng: np.random.Generator, probs: FloatArray) -> IntArray:
    """One categorical draw per row of `probs` (rows sum to 1)."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))[:, None]
    return np.minimum((u >= cum).sum(axis=1), probs.shape[1] - 1).astype(np.int64)


def _state_probs(theta: FloatArray, delta: FloatArray, city: IntArray, asn: IntArray) -> FloatArray:
    p = (theta[:, city] * delta[:, asn]).T
    tot = p.sum(axis=1, keepdims=True)
    if np.any(tot <= 0):
        raise DataError("city and AS state distributions share no support for some object")
    out: FloatArray = p / tot
    return out


def _draw_values(
    rng: np.random.Generator, mean: FloatArray, w: float, eta: float
) -> FloatArray:
    """
    Draws from the piecewise exponential the latent fit scores, normalized: head mass
    1 - exp(-eta/mean) on [0, eta), tail mass exp(-eta/(mean w)) on [eta, inf).
    """
    head = -np.expm1(-eta / mean)
    tail_mass = np.exp(-eta / (mean * w))
    tail = rng.random(len(mean)) * (head + tail_mass) >= head
    # inverse CDF of Exp(mean) truncated to [0, eta)
    t = -mean * np.log1p(-rng.random(len(mean)) * head)
    if np.any(tail):
        t[tail] = eta + rng.exponential(mean[tail] * w)
    out: FloatArray = t
    return out


def synthesize(spec: SynthSpec) -> SynthResult:
    region_rng = make_rng(spec.region_seed, 2)
    u_city = region_rng.integers(spec.n_user_cities, size=spec.n_users)
    u_as = region_rng.integers(spec.n_user_as, size=spec.n_users)
    s_city = region_rng.integers(spec.n_service_cities, size=spec.n_services)
    s_as = region_rng.integers(spec.n_service_as, size=spec.n_services)

    rng = make_rng(spec.seed, 3)
    cells = np.sort(rng.choice(spec.n_users * spec.n_services, size=spec.n_records, replace=False))
    uid = cells // spec.n_services
    sid = cells % spec.n_services

    j = _draw_states(rng, _state_probs(spec.theta_u, spec.delta_u, u_city[uid], u_as[uid]))
    k = _draw_states(rng, _state_probs(spec.theta_s, spec.delta_s, s_city[sid], s_as[sid]))
    mean = spec.c_u[j] * spec.c_s[k]

    t = _draw_values(rng, mean, spec.w, spec.eta)
    for _ in range(MAX_REDRAW_ROUNDS):
        bad = t > spec.value_cap
        if not np.any(bad):
            break
        t[bad] = _draw_values(rng, mean[bad], spec.w, spec.eta)
    else:
        raise DataError(f"value cap {spec.value_cap} rejects nearly every draw; raise the cap")

    records = RecordSet(
        user_id=uid,
        service_id=sid,
        value=t,
        user_city=u_city[uid],
        user_as=u_as[uid],
        service_city=s_city[sid],
        service_as=s_as[sid],
    )
    books = Codebooks.numbered(
        {
            "user_city": spec.n_user_cities,
            "user_as": spec.n_user_as,
            "service_city": spec.n_service_cities,
            "service_as": spec.n_service_as,
        }
    )
    log.info("synthesized %d records (m=%d, seed=%d)", len(records), spec.m, spec.seed)
    return SynthResult(records, np.stack([j, k], axis=1), books, spec)
