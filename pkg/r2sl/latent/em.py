#
# EM plus gradient-ascent fit of the regional latent-state model.
#
# Per record i with user state j and service state k:
#   tau[i,j,k]  = theta_u[j,ct_u] delta_u[j,as_u] theta_s[k,ct_s] delta_s[k,as_s]
#   mean[i,j,k] = c_u[j] c_s[k] (times w when T_i >= eta)
#   phi[i,j,k]  = exp(-T_i / mean) / mean
#   LL          = sum_i log sum_{j,k} tau phi
# The E-step normalizes tau*phi per record; the M-step re-estimates the four
# distribution matrices in closed form; the GD step ascends the expected
# complete-data log-likelihood in (c_u, c_s, w) with backtracking.
#
# Work is done in fixed-size record chunks and reduced in chunk order, so
# results depend only on the inputs and chunk_size.
#

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.special import logsumexp

from ..errors import DataError, NumericalError
from ..nncore.rng import make_rng
from ..types import Codebooks, FloatArray, IntArray, QosRecord, RecordSet
from .model import MATRIX_KINDS, LatentConfig, RegionalLatentModel, sizes_of

log = logging.getLogger(__name__)

INIT_STREAM = 7


class RegionMatrices(NamedTuple):
    theta_u: FloatArray
    theta_s: FloatArray
    delta_u: FloatArray
    delta_s: FloatArray


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """Normalized posteriors over (user state, service state), one m x m block per record."""

    g: FloatArray  # (n, m, m)
    log_likelihood: float

    def __len__(self) -> int:
        return len(self.g)


def exp_pdf(t: Union[float, FloatArray], lam: Union[float, FloatArray]) -> Union[float, FloatArray]:
    lam_a = np.asarray(lam, dtype=np.float64)
    t_a = np.asarray(t, dtype=np.float64)
    if np.any(lam_a <= 0):
        raise ValueError("exponential rate must be positive")
    if np.any(t_a < 0):
        raise ValueError("exponential density is defined for t >= 0")
    out = lam_a * np.exp(-t_a * lam_a)
    return float(out) if out.ndim == 0 else out


def rate(j: int, k: int, t: float, model: RegionalLatentModel) -> float:
    m = model.m
    if not (0 <= j < m and 0 <= k < m):
        raise IndexError(f"state pair ({j}, {k}) outside 0..{m - 1}")
    mean = model.c_u[j] * model.c_s[k]
    if t >= model.config.eta:
        mean *= model.w
    return float(1.0 / mean)


def _check_code(model: RegionalLatentModel, name: str, code: int) -> None:
    cols = getattr(model, name).shape[1]
    if not 0 <= code < cols:
        raise DataError(f"{MATRIX_KINDS[name]} code {code} outside [0, {cols})")


def mixture_weight(record: QosRecord, j: int, k: int, model: RegionalLatentModel) -> float:
    _check_code(model, "theta_u", record.user_city)
    _check_code(model, "delta_u", record.user_as)
    _check_code(model, "theta_s", record.service_city)
    _check_code(model, "delta_s", record.service_as)
    return float(
        model.delta_u[j, record.user_as]
        * model.delta_s[k, record.service_as]
        * model.theta_u[j, record.user_city]
        * model.theta_s[k, record.service_city]
    )


def _chunks(n: int, size: int) -> Iterator[slice]:
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _log_tau(model: RegionalLatentModel, records: RecordSet, sl: slice) -> FloatArray:
    with np.errstate(divide="ignore"):
        lu = np.log(
            model.theta_u[:, records.user_city[sl]] * model.delta_u[:, records.user_as[sl]]
        ).T
        ls = np.log(
            model.theta_s[:, records.service_city[sl]] * model.delta_s[:, records.service_as[sl]]
        ).T
    out: FloatArray = lu[:, :, None] + ls[:, None, :]
    return out


def _means(
    c_u: FloatArray, c_s: FloatArray, w: float, eta: float, t: FloatArray
) -> FloatArray:
    scale = np.where(t >= eta, w, 1.0)
    out: FloatArray = np.multiply.outer(scale, np.outer(c_u, c_s))
    return out


def _log_phi(
    c_u: FloatArray, c_s: FloatArray, w: float, eta: float, t: FloatArray
) -> FloatArray:
    mean = _means(c_u, c_s, w, eta, t)
    out: FloatArray = -np.log(mean) - t[:, None, None] / mean
    return out


def _joint(model: RegionalLatentModel, records: RecordSet, sl: slice) -> FloatArray:
    cfg = model.config
    return _log_tau(model, records, sl) + _log_phi(
        model.c_u, model.c_s, model.w, cfg.eta, records.value[sl]
    )


def _normalizers(joint: FloatArray, offset: int) -> FloatArray:
    flat = joint.reshape(len(joint), -1)
    lse: FloatArray = logsumexp(flat, axis=1)
    bad = ~np.isfinite(lse)
    if np.any(bad):
        first = offset + int(np.argmax(bad))
        raise NumericalError(f"record {first} has zero mixture mass; parameters collapsed")
    return lse


def _require_records(records: RecordSet) -> None:
    if len(records) == 0:
        raise DataError("latent model needs at least one record")


def log_likelihood(records: RecordSet, model: RegionalLatentModel) -> float:
    _require_records(records)
    partials = []
    for sl in _chunks(len(records), model.config.chunk_size):
        partials.append(float(_normalizers(_joint(model, records, sl), sl.start).sum()))
    return math.fsum(partials)


def e_step(records: RecordSet, model: RegionalLatentModel) -> Responsibilities:
    _require_records(records)
    m = model.m
    g = np.empty((len(records), m, m))
    partials = []
    for sl in _chunks(len(records), model.config.chunk_size):
        joint = _joint(model, records, sl)
        lse = _normalizers(joint, sl.start)
        g[sl] = np.exp(joint - lse[:, None, None])
        partials.append(float(lse.sum()))
    g.setflags(write=False)
    return Responsibilities(g, math.fsum(partials))


def _column_update(codes: IntArray, weights: FloatArray, size: int) -> tuple[FloatArray, int]:
    m = weights.shape[1]
    acc = np.stack([np.bincount(codes, weights=weights[:, j], minlength=size) for j in range(m)])
    total = acc.sum(axis=0)
    empty = total <= 0
    acc[:, empty] = 1.0 / m
    acc[:, ~empty] /= total[~empty]
    return acc, int(empty.sum())


def m_step(
    records: RecordSet,
    responsibilities: Responsibilities,
    codebooks: Union[Codebooks, dict[str, int]],
) -> RegionMatrices:
    if len(responsibilities) != len(records):
        raise ValueError("responsibilities and records differ in length")
    if isinstance(codebooks, Codebooks):
        codebooks.check(records)
    sizes = sizes_of(codebooks)
    user_mass = responsibilities.g.sum(axis=2)
    service_mass = responsibilities.g.sum(axis=1)
    mats = {}
    empty = 0
    for name, kind in MATRIX_KINDS.items():
        codes = records.codes(kind)
        if len(codes) and (codes.min() < 0 or codes.max() >= sizes[kind]):
            bad = int(codes.max() if codes.max() >= sizes[kind] else codes.min())
            raise DataError(f"{kind} code {bad} outside [0, {sizes[kind]})")
        mass = user_mass if name.endswith("_u") else service_mass
        mats[name], n_empty = _column_update(codes, mass, sizes[kind])
        empty += n_empty
    if empty:
        log.warning("m-step: %d unobserved region columns set uniform", empty)
    return RegionMatrices(**mats)


def _q_phi(
    records: RecordSet,
    g: FloatArray,
    c_u: FloatArray,
    c_s: FloatArray,
    w: float,
    eta: float,
    chunk_size: int,
) -> float:
    partials = []
    for sl in _chunks(len(records), chunk_size):
        lp = _log_phi(c_u, c_s, w, eta, records.value[sl])
        partials.append(float((g[sl] * lp).sum()))
    return math.fsum(partials)


def q_function(
    records: RecordSet, responsibilities: Responsibilities, model: RegionalLatentModel
) -> float:
    """Expected complete-data log-likelihood sum_i sum_{j,k} G log(tau phi)."""
    g = responsibilities.g
    partials = []
    for sl in _chunks(len(records), model.config.chunk_size):
        joint = _joint(model, records, sl)
        gs = g[sl]
        with np.errstate(invalid="ignore"):
            partials.append(float(np.where(gs > 0, gs * joint, 0.0).sum()))
    return math.fsum(partials)


def q_gradient(
    records: RecordSet, responsibilities: Responsibilities, model: RegionalLatentModel
) -> tuple[FloatArray, FloatArray, float]:
    """Analytic gradient of the Q function in (c_u, c_s, w)."""
    cfg = model.config
    m = model.m
    g_cu = np.zeros(m)
    g_cs = np.zeros(m)
    g_w = 0.0
    for sl in _chunks(len(records), cfg.chunk_size):
        t = records.value[sl]
        mean = _means(model.c_u, model.c_s, model.w, cfg.eta, t)
        a = responsibilities.g[sl] * (t[:, None, None] / mean - 1.0)
        g_cu += a.sum(axis=(0, 2))
        g_cs += a.sum(axis=(0, 1))
        g_w += float(a[t >= cfg.eta].sum())
    return g_cu / model.c_u, g_cs / model.c_s, g_w / model.w


def gd_step(
    records: RecordSet, responsibilities: Responsibilities, model: RegionalLatentModel
) -> tuple[FloatArray, FloatArray, float]:
    cfg = model.config
    lr = cfg.learning_rate
    if lr == 0:
        return model.c_u, model.c_s, model.w
    g_cu, g_cs, g_w = q_gradient(records, responsibilities, model)
    if not (np.all(np.isfinite(g_cu)) and np.all(np.isfinite(g_cs)) and math.isfinite(g_w)):
        raise NumericalError("non-finite gradient in complexity factors")

    g = responsibilities.g
    floor = cfg.param_floor
    base = _q_phi(records, g, model.c_u, model.c_s, model.w, cfg.eta, cfg.chunk_size)
    for attempt in range(cfg.max_backtracks + 1):
        c_u = np.maximum(model.c_u + lr * g_cu, floor)
        c_s = np.maximum(model.c_s + lr * g_cs, floor)
        w = max(model.w + lr * g_w, floor)
        if _q_phi(records, g, c_u, c_s, w, cfg.eta, cfg.chunk_size) >= base:
            if attempt:
                log.debug("gd-step: accepted after %d halvings (rate %g)", attempt, lr)
            return c_u, c_s, w
        lr *= 0.5
    log.warning("gd-step: no ascent after %d halvings, factors unchanged", cfg.max_backtracks)
    return model.c_u, model.c_s, model.w


def initial_model(
    records: RecordSet,
    codebooks: Union[Codebooks, dict[str, int]],
    config: LatentConfig,
) -> RegionalLatentModel:
    """Uniform columns with seeded symmetric jitter; data-driven complexity factors."""
    _require_records(records)
    m = config.m
    sizes = sizes_of(codebooks)
    rng = make_rng(config.seed, INIT_STREAM)
    mats = {}
    for name, kind in MATRIX_KINDS.items():
        e = rng.uniform(-1.0, 1.0, size=(m, sizes[kind]))
        col = 1.0 / m + config.jitter * (e - e.mean(axis=0))
        col = np.maximum(col, 0.01 / m)
        mats[name] = col / col.sum(axis=0)

    values = records.value
    body = values[values < config.eta]
    base = math.sqrt(float(np.mean(body if len(body) else values)))
    spread = np.geomspace(0.5, 2.0, m) if m > 1 else np.ones(1)
    c = np.maximum(base * spread, config.param_floor)
    return RegionalLatentModel(
        c_u=c, c_s=c.copy(), w=config.w_init, config=config, **mats
    )


def fit(
    records: RecordSet,
    codebooks: Union[Codebooks, dict[str, int]],
    config: LatentConfig,
    init: Optional[RegionalLatentModel] = None,
) -> RegionalLatentModel:
    _require_records(records)
    if isinstance(codebooks, Codebooks):
        codebooks.check(records)
    model = init.replace(config=config) if init is not None else initial_model(
        records, codebooks, config
    )
    resp = e_step(records, model)
    trace = [resp.log_likelihood]
    log.info("latent fit: n=%d m=%d initial LL %.6g", len(records), config.m, trace[0])

    for it in range(config.max_iters):
        mats = m_step(records, resp, codebooks)
        model = model.replace(**mats._asdict())
        c_u, c_s, w = gd_step(records, resp, model)
        model = model.replace(c_u=c_u, c_s=c_s, w=w)

        resp = e_step(records, model)
        prev, cur = trace[-1], resp.log_likelihood
        trace.append(cur)
        gain = (cur - prev) / abs(prev) if prev != 0 else (0.0 if cur == prev else math.inf)
        log.debug("latent fit: iter %d LL %.10g rel gain %.3g", it + 1, cur, gain)
        if (it + 1) % 10 == 0:
            log.info("latent fit: iter %d LL %.6g", it + 1, cur)
        if gain < config.gamma:
            break
    else:
        log.info("latent fit: stopped at max_iters=%d", config.max_iters)

    log.info("latent fit: %d iterations, final LL %.6g", len(trace) - 1, trace[-1])
    return model.replace(fit_log=tuple(trace))


def latent_features(
    model: RegionalLatentModel, user_city: int, user_as: int, service_city: int, service_as: int
) -> FloatArray:
    for name, code in (
        ("theta_u", user_city),
        ("delta_u", user_as),
        ("theta_s", service_city),
        ("delta_s", service_as),
    ):
        _check_code(model, name, code)
    return np.concatenate(
        [
            model.theta_u[:, user_city],
            model.delta_u[:, user_as],
            model.theta_s[:, service_city],
            model.delta_s[:, service_as],
        ]
    )


def latent_feature_matrix(model: RegionalLatentModel, records: RecordSet) -> FloatArray:
    """latent_features for every record, as an (n, 4m) matrix."""
    sizes = model.sizes()
    for kind, cols in sizes.items():
        codes = records.codes(kind)
        if len(codes) and (codes.min() < 0 or codes.max() >= cols):
            raise DataError(f"{kind} code outside [0, {cols}) for the latent model")
    return np.concatenate(
        [
            model.theta_u[:, records.user_city].T,
            model.delta_u[:, records.user_as].T,
            model.theta_s[:, records.service_city].T,
            model.delta_s[:, records.service_as].T,
        ],
        axis=1,
    )


def region_assignments(model: RegionalLatentModel) -> dict[str, IntArray]:
    """Most probable latent state for every region, per matrix."""
    return {name: np.argmax(getattr(model, name), axis=0) for name in MATRIX_KINDS}


def _best_match(fitted: list[IntArray], truth: list[IntArray], m: int) -> int:
    best = 0
    for perm in itertools.permutations(range(m)):
        p = np.asarray(perm)
        best = max(best, sum(int(np.sum(p[f] == t)) for f, t in zip(fitted, truth)))
    return best


def assignment_agreement(fitted: RegionalLatentModel, truth: RegionalLatentModel) -> float:
    """
    Fraction of regions whose argmax state matches the truth under the best
    relabeling. User and service states are relabeled independently.
    """
    if fitted.m != truth.m or fitted.sizes() != truth.sizes():
        raise ValueError("models differ in shape")
    fa = region_assignments(fitted)
    ta = region_assignments(truth)
    hits = 0
    total = 0
    for side in ("_u", "_s"):
        names = [n for n in MATRIX_KINDS if n.endswith(side)]
        hits += _best_match([fa[n] for n in names], [ta[n] for n in names], fitted.m)
        total += sum(len(ta[n]) for n in names)
    return hits / total if total else 1.0
