#
# The prediction network.
#
#   ids ──embed──▶ six D-wide vectors (user, service, user city/AS, service city/AS)
#   latent columns (theta_u, delta_u, theta_s, delta_s) ──dense──▶ four D-wide vectors
#
#   expert i:  inputs ─dense─▶ H ─reshape (H x 1)─┬─conv k=3─gelu─┐
#                                                 └─conv k=5─gelu─┴─ w_out sum ─▶ E_i
#              task experts take every vector; physical experts the two city
#              projections; virtual experts the two AS projections
#
#   gate:      concat(user, service) ─dense─sigmoid─dense─softmax─▶ top-k, renormalized
#   decoder:   concat_i(g_i E_i) ─dense 2^v─gelu─2^(v-1)─gelu─2^(v-2)─gelu─dense 1
#

from __future__ import annotations

import logging
from collections.abc import Iterator, Mapping
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from ..errors import ConfigError, DataError
from ..latent import RegionalLatentModel, latent_feature_matrix
from ..nncore import Node, Param, constant, make_rng, ops
from ..types import BoolArray, FloatArray, IntArray, RecordSet, TableSizes
from .config import ID_TABLES, LATENT_PARTS, PHYSICAL_PARTS, VIRTUAL_PARTS, NetworkConfig

log = logging.getLogger(__name__)

INIT_STREAM = 11
PREDICT_CHUNK = 8192
EMBED_STD = 0.1
W_OUT_INIT = 0.5


@dataclass(frozen=True, eq=False)
class InputBatch:
    """Everything the network reads from a record set, before any parameter is applied."""

    ids: Mapping[str, IntArray]
    latent: FloatArray  # (B, 4m) in LATENT_PARTS order

    def __len__(self) -> int:
        return len(self.latent)

    def take(self, index: npt.ArrayLike) -> InputBatch:
        idx = np.asarray(index, dtype=np.int64)
        return InputBatch({k: v[idx] for k, v in self.ids.items()}, self.latent[idx])

    def chunks(self, size: int) -> Iterator[InputBatch]:
        for start in range(0, len(self), size):
            yield self.take(np.arange(start, min(start + size, len(self))))


def encode_records(records: RecordSet, latent_model: RegionalLatentModel) -> InputBatch:
    return InputBatch(
        {name: getattr(records, name) for name in ID_TABLES},
        latent_feature_matrix(latent_model, records),
    )


@dataclass(frozen=True)
class FeatureBundle:
    known: tuple[Node, ...]  # ID_TABLES order
    latent: tuple[Node, ...]  # LATENT_PARTS order

    def part(self, name: str) -> Node:
        if name in ID_TABLES:
            return self.known[ID_TABLES.index(name)]
        return self.latent[LATENT_PARTS.index(name)]

    def full(self) -> Node:
        return ops.concat(list(self.known + self.latent))

    def inputs_for(self, kind: str) -> Node:
        if kind == "task":
            return self.full()
        parts = PHYSICAL_PARTS if kind == "physical" else VIRTUAL_PARTS
        return ops.concat([self.part(p) for p in parts])


@dataclass(frozen=True)
class ExpertParams:
    kind: str
    fuse_w: Param
    fuse_b: Param
    conv3_k: Param
    conv3_b: Param
    conv5_k: Param
    conv5_b: Param
    w_out: Param  # (2, H): row 0 weights the k=3 branch, row 1 the k=5 branch


@dataclass(frozen=True)
class GateParams:
    w1: Param
    b1: Param
    w2: Param
    b2: Param


@dataclass(frozen=True, eq=False)
class GateDecision:
    raw: FloatArray  # (B, N), rows on the simplex
    active_mask: BoolArray  # (B, N)
    sparse: FloatArray  # (B, N), renormalized over the active set

    def __len__(self) -> int:
        return len(self.raw)


@dataclass(frozen=True, eq=False)
class ForwardResult:
    prediction: Node  # (B,)
    gate: GateDecision
    experts: tuple[Node, ...]


def expert_forward(x: Node, p: ExpertParams) -> Node:
    fused = ops.dense(x, p.fuse_w, p.fuse_b)
    batch, hidden = fused.shape
    fmap = ops.reshape(fused, (batch, hidden, 1))
    g3 = ops.reshape(ops.gelu(ops.conv1d(fmap, p.conv3_k, p.conv3_b)), (batch, 1, hidden))
    g5 = ops.reshape(ops.gelu(ops.conv1d(fmap, p.conv5_k, p.conv5_b)), (batch, 1, hidden))
    branches = ops.concat([g3, g5], axis=1)  # (B, 2, H)
    return ops.reduce_sum(ops.mul(branches, p.w_out), axis=1)


def top_k_mask(raw: FloatArray, top_k: int) -> BoolArray:
    """Largest top_k entries per row; ties go to the lower expert index."""
    order = np.argsort(-raw, axis=1, kind="stable")[:, :top_k]
    mask = np.zeros(raw.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def gate_forward(
    user_emb: Node, service_emb: Node, gate: GateParams, top_k: int, dense_gate: bool
) -> tuple[GateDecision, Node]:
    hidden = ops.sigmoid(ops.dense(ops.concat([user_emb, service_emb]), gate.w1, gate.b1))
    raw = ops.softmax(ops.dense(hidden, gate.w2, gate.b2))
    if dense_gate:
        mask = np.ones(raw.shape, dtype=bool)
        return GateDecision(raw.value, mask, raw.value), raw
    mask = top_k_mask(raw.value, top_k)
    kept = ops.mul(raw, mask.astype(np.float64))
    sparse = ops.div(kept, ops.reduce_sum(kept, axis=1, keepdims=True))
    return GateDecision(raw.value, mask, sparse.value), sparse


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> FloatArray:
    out: FloatArray = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_out, fan_in))
    return out


class R2slNetwork:
    def __init__(self, config: NetworkConfig, sizes: TableSizes, params: Mapping[str, Param]):
        self.config = config
        self.sizes = sizes
        self.params: dict[str, Param] = dict(params)
        for name, p in self.params.items():
            if p.name != name:
                raise ConfigError(f"parameter stored as {name!r} is named {p.name!r}")
        d = config.embed_dim
        self.experts = tuple(self._expert(i) for i in range(config.n_experts))
        p = self.params
        self.gate = GateParams(p["gate.l1.w"], p["gate.l1.b"], p["gate.l2.w"], p["gate.l2.b"])
        if self.params["emb.user_id"].shape[1] != d:
            raise ConfigError("embedding width does not match embed_dim")

    def _expert(self, i: int) -> ExpertParams:
        p = self.params
        pre = f"expert.{i}."
        return ExpertParams(
            self.config.expert_kind(i),
            p[pre + "fuse.w"],
            p[pre + "fuse.b"],
            p[pre + "conv3.k"],
            p[pre + "conv3.b"],
            p[pre + "conv5.k"],
            p[pre + "conv5.b"],
            p[pre + "w_out"],
        )

    @classmethod
    def init(cls, config: NetworkConfig, sizes: TableSizes) -> R2slNetwork:
        """Seeded initialization: normal embeddings, Glorot dense and conv weights, zero biases."""
        rng = make_rng(config.seed, INIT_STREAM)
        d, h, m = config.embed_dim, config.hidden, config.latent_m
        values: dict[str, FloatArray] = {}
        for table in ID_TABLES:
            values[f"emb.{table}"] = rng.normal(0.0, EMBED_STD, size=(max(sizes.rows(table), 1), d))
        for part in LATENT_PARTS:
            values[f"proj.{part}.w"] = _glorot(rng, d, m)
            values[f"proj.{part}.b"] = np.zeros(d)
        for i in range(config.n_experts):
            width = 10 * d if config.expert_kind(i) == "task" else 2 * d
            values[f"expert.{i}.fuse.w"] = _glorot(rng, h, width)
            values[f"expert.{i}.fuse.b"] = np.zeros(h)
            for k in (3, 5):
                values[f"expert.{i}.conv{k}.k"] = rng.normal(0.0, 1.0 / np.sqrt(k), size=(k, 1, 1))
                values[f"expert.{i}.conv{k}.b"] = np.zeros(1)
            values[f"expert.{i}.w_out"] = np.full((2, h), W_OUT_INIT)
        values["gate.l1.w"] = _glorot(rng, config.gate_hidden, 2 * d)
        values["gate.l1.b"] = np.zeros(config.gate_hidden)
        values["gate.l2.w"] = _glorot(rng, config.n_experts, config.gate_hidden)
        values["gate.l2.b"] = np.zeros(config.n_experts)
        fan_in = config.n_experts * h
        for layer, width in enumerate(config.decoder_widths):
            values[f"dec.{layer}.w"] = _glorot(rng, width, fan_in)
            values[f"dec.{layer}.b"] = np.zeros(width)
            fan_in = width
        net = cls(config, sizes, {name: Param(name, v) for name, v in values.items()})
        log.debug("initialized network: %s", network_summary(net))
        return net

    def parameters(self) -> list[Param]:
        return list(self.params.values())

    def state(self) -> dict[str, FloatArray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_state(self, state: Mapping[str, FloatArray]) -> None:
        if set(state) != set(self.params):
            raise DataError("parameter set does not match the network layout")
        for name, value in state.items():
            p = self.params[name]
            if value.shape != p.value.shape:
                raise DataError(f"parameter {name} has shape {value.shape}, expected {p.shape}")
            p.value[...] = value

    def check_latent(self, latent_model: RegionalLatentModel) -> None:
        if latent_model.m != self.config.latent_m:
            raise ConfigError(
                f"network expects m={self.config.latent_m} latent states, "
                f"model has {latent_model.m}"
            )

    # ----- forward pass -----

    def build_inputs(self, batch: InputBatch) -> FeatureBundle:
        m = self.config.latent_m
        if batch.latent.shape[1] != 4 * m:
            raise DataError(f"latent features have width {batch.latent.shape[1]}, expected {4 * m}")
        known = tuple(ops.embed(batch.ids[t], self.params[f"emb.{t}"]) for t in ID_TABLES)
        mask = self.config.latent_mask()
        latent = []
        for j, part in enumerate(LATENT_PARTS):
            cols = constant(batch.latent[:, j * m : (j + 1) * m])
            proj = ops.dense(cols, self.params[f"proj.{part}.w"], self.params[f"proj.{part}.b"])
            latent.append(proj if mask[j] else ops.scale(proj, 0.0))
        return FeatureBundle(known, tuple(latent))

    def forward(self, batch: InputBatch) -> ForwardResult:
        bundle = self.build_inputs(batch)
        decision, weights = gate_forward(
            bundle.part("user_id"),
            bundle.part("service_id"),
            self.gate,
            self.config.top_k,
            self.config.dense_gate,
        )
        outputs = tuple(expert_forward(bundle.inputs_for(p.kind), p) for p in self.experts)
        fused = ops.concat(
            [ops.mul(ops.columns(weights, i, i + 1), e) for i, e in enumerate(outputs)]
        )
        x = fused
        last = len(self.config.decoder_widths) - 1
        for layer in range(last + 1):
            x = ops.dense(x, self.params[f"dec.{layer}.w"], self.params[f"dec.{layer}.b"])
            if layer < last:
                x = ops.gelu(x)
        return ForwardResult(ops.reshape(x, (len(batch),)), decision, outputs)

    def predict_batch(self, batch: InputBatch) -> FloatArray:
        out = np.empty(len(batch))
        pos = 0
        for chunk in batch.chunks(PREDICT_CHUNK):
            out[pos : pos + len(chunk)] = self.forward(chunk).prediction.value
            pos += len(chunk)
        return out

    def predict(self, records: RecordSet, latent_model: RegionalLatentModel) -> FloatArray:
        self.check_latent(latent_model)
        return self.predict_batch(encode_records(records, latent_model))

    def gate_decisions(
        self, records: RecordSet, latent_model: RegionalLatentModel
    ) -> GateDecision:
        self.check_latent(latent_model)
        batch = encode_records(records, latent_model)
        parts = [self.forward(c).gate for c in batch.chunks(PREDICT_CHUNK)]
        return GateDecision(
            np.concatenate([p.raw for p in parts]),
            np.concatenate([p.active_mask for p in parts]),
            np.concatenate([p.sparse for p in parts]),
        )


def build_inputs(
    records: RecordSet, latent_model: RegionalLatentModel, network: R2slNetwork
) -> FeatureBundle:
    network.check_latent(latent_model)
    return network.build_inputs(encode_records(records, latent_model))


def forward(
    records: RecordSet, latent_model: RegionalLatentModel, network: R2slNetwork
) -> FloatArray:
    return network.predict(records, latent_model)


def network_summary(network: R2slNetwork) -> str:
    cfg = network.config
    n = sum(p.value.size for p in network.parameters())
    kinds = ",".join(cfg.expert_kind(i) for i in range(cfg.n_experts))
    gate = "dense" if cfg.dense_gate else f"top-{cfg.top_k}"
    return f"{n} parameters; experts [{kinds}]; gate {gate}; mask {cfg.feature_mask}"

