#
# Reference predictors: user-based Pearson collaborative filtering (UPCC) and
# global/user/service mean predictors.
#
# UPCC prediction for (u, s):
#   rbar_u + sum_v sim(u,v) (r_vs - rbar_v) / sum_v |sim(u,v)|
# over the top-k neighbours v with sim(u,v) > 0 that rated s. Similarities use
# the co-rated services of each pair only; pairs with fewer than min_overlap
# co-rated services, or a constant co-rated vector, have no similarity.
# No usable neighbour: user mean, then global mean.
#

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .types import BoolArray, FloatArray, IntArray, RecordSet

log = logging.getLogger(__name__)

MEAN_LEVELS = ("global", "user", "service")
PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class UpccConfig:
    top_k_neighbors: int = 10
    min_overlap: int = 2

    def __post_init__(self) -> None:
        if self.top_k_neighbors < 1:
            raise ConfigError(f"upcc.top_k_neighbors must be >= 1, got {self.top_k_neighbors}")
        if self.min_overlap < 2:
            raise ConfigError(f"upcc.min_overlap must be >= 2, got {self.min_overlap}")


def _require(records: RecordSet) -> None:
    if len(records) == 0:
        raise DataError("baseline needs at least one training record")


def rating_matrix(records: RecordSet) -> tuple[FloatArray, BoolArray]:
    """Dense user x service ratings (repeated pairs averaged) and the observed mask."""
    n_u = int(records.user_id.max()) + 1
    n_s = int(records.service_id.max()) + 1
    total = np.zeros((n_u, n_s))
    count = np.zeros((n_u, n_s))
    np.add.at(total, (records.user_id, records.service_id), records.value)
    np.add.at(count, (records.user_id, records.service_id), 1.0)
    mask = count > 0
    ratings = np.divide(total, count, out=np.zeros_like(total), where=mask)
    return ratings, mask


def pearson_similarity(ratings: FloatArray, mask: BoolArray, min_overlap: int = 2) -> FloatArray:
    """
    User x user Pearson correlation over co-rated services; NaN where undefined
    (too little overlap, zero variance on the overlap, or the diagonal).
    """
    r = np.where(mask, ratings, 0.0)
    mf = mask.astype(np.float64)
    r2 = r * r
    n = mf @ mf.T
    sum_a = r @ mf.T  # sum of a's ratings over services b also rated
    sum_b = sum_a.T
    sq_a = r2 @ mf.T
    sq_b = sq_a.T
    cross = r @ r.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = cross - sum_a * sum_b / n
        var_a = sq_a - sum_a * sum_a / n
        var_b = sq_b - sum_b * sum_b / n
        sim = cov / np.sqrt(var_a * var_b)
    tiny = 1e-12 * np.maximum(1.0, np.maximum(sq_a, sq_b))
    valid = (n >= min_overlap) & (var_a > tiny) & (var_b > tiny)
    sim = np.where(valid, np.clip(sim, -1.0, 1.0), np.nan)
    np.fill_diagonal(sim, np.nan)
    out: FloatArray = sim
    return out


@dataclass(frozen=True, eq=False)
class UpccModel:
    config: UpccConfig
    ratings: FloatArray  # (users, services), zero where unobserved
    mask: BoolArray
    user_mean: FloatArray  # NaN for users without ratings
    global_mean: float
    similarity: FloatArray  # (users, users), NaN where undefined

    @property
    def n_users(self) -> int:
        return int(self.ratings.shape[0])

    @property
    def n_services(self) -> int:
        return int(self.ratings.shape[1])

    def _predict_known(self, users: IntArray, services: IntArray) -> FloatArray:
        k = self.config.top_k_neighbors
        sim = self.similarity[users]  # (B, U)
        rated = self.mask[:, services].T  # (B, U)
        usable = rated & (sim > 0)
        score = np.where(usable, sim, -np.inf)
        order = np.argsort(-score, axis=1, kind="stable")[:, :k]
        rows = np.arange(len(users))[:, None]
        top_sim = score[rows, order]
        keep = np.isfinite(top_sim)
        weight = np.where(keep, top_sim, 0.0)
        offset = self.ratings[order, services[:, None]] - self.user_mean[order]
        offset = np.where(keep, offset, 0.0)
        denom = np.abs(weight).sum(axis=1)
        base = self.user_mean[users]
        with np.errstate(invalid="ignore", divide="ignore"):
            adj = (weight * offset).sum(axis=1) / denom
        pred = np.where(denom > 0, base + adj, base)
        out: FloatArray = np.where(np.isnan(pred), self.global_mean, pred)
        return out

    def predict(self, records: RecordSet) -> FloatArray:
        users = records.user_id
        services = records.service_id
        out = np.full(len(records), self.global_mean)
        known_u = (users >= 0) & (users < self.n_users)
        known_s = (services >= 0) & (services < self.n_services)
        only_user = known_u & ~known_s
        out[only_user] = self.user_mean[users[only_user]]
        idx = np.flatnonzero(known_u & known_s)
        for start in range(0, len(idx), PREDICT_CHUNK):
            sel = idx[start : start + PREDICT_CHUNK]
            out[sel] = self._predict_known(users[sel], services[sel])
        return np.where(np.isnan(out), self.global_mean, out)


def upcc_fit(records: RecordSet, config: Optional[UpccConfig] = None) -> UpccModel:
    _require(records)
    config = config or UpccConfig()
    ratings, mask = rating_matrix(records)
    counts = mask.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        user_mean = np.where(counts > 0, ratings.sum(axis=1) / counts, np.nan)
    sim = pearson_similarity(ratings, mask, config.min_overlap)
    log.info(
        "upcc: %d users x %d services, %d usable similarity pairs",
        mask.shape[0],
        mask.shape[1],
        int(np.sum(sim > 0)),
    )
    return UpccModel(config, ratings, mask, user_mean, float(records.value.mean()), sim)


def upcc_predict(user: int, service: int, model: UpccModel) -> float:
    one = RecordSet(
        user_id=[user],
        service_id=[service],
        value=[0.0],
        user_city=[0],
        user_as=[0],
        service_city=[0],
        service_as=[0],
    )
    return float(model.predict(one)[0])


@dataclass(frozen=True, eq=False)
class MeanPredictor:
    level: str
    global_mean: float
    means: FloatArray  # per id at user/service level (NaN for ids never seen); empty at global

    def predict(self, records: RecordSet) -> FloatArray:
        if self.level == "global":
            return np.full(len(records), self.global_mean)
        ids = records.user_id if self.level == "user" else records.service_id
        out = np.full(len(records), self.global_mean)
        known = (ids >= 0) & (ids < len(self.means))
        vals = self.means[ids[known]]
        out[known] = np.where(np.isnan(vals), self.global_mean, vals)
        return out


def mean_predict(level: str, train: RecordSet) -> MeanPredictor:
    if level not in MEAN_LEVELS:
        raise ConfigError(f"mean level must be one of {', '.join(MEAN_LEVELS)}, got {level!r}")
    _require(train)
    global_mean = float(train.value.mean())
    if level == "global":
        return MeanPredictor(level, global_mean, np.zeros(0))
    ids = train.user_id if level == "user" else train.service_id
    sums = np.bincount(ids, weights=train.value)
    counts = np.bincount(ids)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / counts, np.nan)
    return MeanPredictor(level, global_mean, means)
