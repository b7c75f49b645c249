from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Optional

import numpy as np

from ..errors import DataError, NumericalError
from ..latent import RegionalLatentModel
from ..loss import LossSpec, loss_node, mae, rmse
from ..nncore import Adam, backward, make_rng, zero_grads
from ..types import RecordSet, TableSizes
from .config import NetworkConfig
from .network import R2slNetwork, encode_records

log = logging.getLogger(__name__)

SHUFFLE_STREAM = 13


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    valid_mae: float
    valid_rmse: float


@dataclass(frozen=True)
class TrainHistory:
    epochs: tuple[EpochStats, ...]
    best_epoch: int  # 0 means the initial parameters were kept
    stopped_early: bool

    @property
    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> TrainHistory:
        return cls(
            tuple(EpochStats(**e) for e in obj["epochs"]),
            int(obj["best_epoch"]),
            bool(obj["stopped_early"]),
        )


def train(
    records_train: RecordSet,
    records_valid: RecordSet,
    latent_model: RegionalLatentModel,
    config: NetworkConfig,
    loss_spec: LossSpec,
    sizes: Optional[TableSizes] = None,
) -> tuple[R2slNetwork, TrainHistory]:
    """
    Mini-batch Adam with a seeded shuffle per epoch. After every epoch the
    validation MAE is measured (training MAE when the validation set is empty);
    training stops once it fails to improve for `patience` epochs and the best
    parameters seen are restored.
    """
    if len(records_train) == 0:
        raise DataError("training set is empty")
    if sizes is None:
        sizes = TableSizes.from_records(records_train)
    network = R2slNetwork.init(config, sizes)
    network.check_latent(latent_model)
    params = network.parameters()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    train_batch = encode_records(records_train, latent_model)
    y_train = records_train.value
    has_valid = len(records_valid) > 0
    monitor_records = records_valid if has_valid else records_train
    monitor_batch = encode_records(monitor_records, latent_model)
    rng = make_rng(config.seed, SHUFFLE_STREAM)
    n = len(records_train)

    best_mae = mae(monitor_records.value, network.predict_batch(monitor_batch))
    best_state = network.state()
    best_epoch = 0
    wait = 0
    stopped = False
    history: list[EpochStats] = []
    log.info(
        "training on %d records (%s), initial %s MAE %.4f",
        n,
        loss_spec.label,
        "validation" if has_valid else "training",
        best_mae,
    )

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            zero_grads(params)
            out = network.forward(train_batch.take(idx))
            loss = loss_node(loss_spec, out.prediction, y_train[idx])
            value = float(loss.value)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {start}")
            backward(loss)
            opt.step()
            total += value * len(idx)

        pred = network.predict_batch(monitor_batch)
        if not np.all(np.isfinite(pred)):
            raise NumericalError(f"non-finite predictions after epoch {epoch}")
        y_mon = monitor_records.value
        stats = EpochStats(epoch, total / n, mae(y_mon, pred), rmse(y_mon, pred))
        history.append(stats)
        log.info(
            "epoch %d: train loss %.6f, MAE %.4f, RMSE %.4f",
            epoch,
            stats.train_loss,
            stats.valid_mae,
            stats.valid_rmse,
        )
        if stats.valid_mae < best_mae:
            best_mae = stats.valid_mae
            best_state = network.state()
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                log.warning(
                    "early stop at epoch %d; restoring epoch %d (MAE %.4f)",
                    epoch,
                    best_epoch,
                    best_mae,
                )
                stopped = True
                break

    network.load_state(best_state)
    return network, TrainHistory(tuple(history), best_epoch, stopped)
