"""
Network documents: one JSON file holding the network configuration, embedding
table sizes, every named parameter (shape plus hex floats, row-major), the
digest of the latent model the network was trained against and the training
history.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from ..errors import DataError
from ..latent import RegionalLatentModel
from ..nncore import Param
from ..types import TableSizes
from .config import NetworkConfig
from .network import R2slNetwork
from .train import TrainHistory

SCHEMA = "r2sl.network"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class NetworkDocument:
    network: R2slNetwork
    latent_digest: str
    latent_path: Optional[str]
    history: Optional[TrainHistory]
    loss: Mapping[str, Any]

    def check_latent(self, latent_model: RegionalLatentModel) -> None:
        digest = latent_model.digest()
        if digest != self.latent_digest:
            raise DataError(
                f"latent model {digest[:12]} differs from the one the network was "
                f"trained with ({self.latent_digest[:12]})"
            )

    def resolve_latent_path(self, base: Path) -> Optional[Path]:
        if self.latent_path is None:
            return None
        p = Path(self.latent_path)
        return p if p.is_absolute() else base / p


def to_document(
    network: R2slNetwork,
    latent_model: RegionalLatentModel,
    history: Optional[TrainHistory] = None,
    *,
    latent_path: Optional[str] = None,
    loss: Optional[Mapping[str, Any]] = None,
) -> dict[str, Any]:
    return {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "config": network.config.to_dict(),
        "sizes": dataclasses.asdict(network.sizes),
        "params": {
            name: {
                "shape": list(p.value.shape),
                "data": [float(v).hex() for v in p.value.reshape(-1)],
            }
            for name, p in network.params.items()
        },
        "latent_digest": latent_model.digest(),
        "latent_path": latent_path,
        "history": history.to_dict() if history is not None else None,
        "loss": dict(loss or {}),
    }


def from_document(doc: Mapping[str, Any]) -> NetworkDocument:
    if doc.get("schema") != SCHEMA:
        raise DataError(f"not a network document (schema {doc.get('schema')!r})")
    if doc.get("version") != SCHEMA_VERSION:
        raise DataError(f"unsupported network document version {doc.get('version')!r}")
    try:
        config = NetworkConfig.from_dict(doc["config"])
        sizes = TableSizes(**doc["sizes"])
        params = {}
        for name, entry in doc["params"].items():
            data = np.array([float.fromhex(v) for v in entry["data"]], dtype=np.float64)
            params[name] = Param(name, data.reshape(tuple(entry["shape"])))
        network = R2slNetwork(config, sizes, params)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed network document: {e}") from None
    expected = R2slNetwork.init(config, sizes)
    if set(expected.params) != set(params) or any(
        expected.params[n].shape != p.shape for n, p in params.items()
    ):
        raise DataError("network document parameters do not match its configuration")
    hist = doc.get("history")
    return NetworkDocument(
        network,
        str(doc["latent_digest"]),
        doc.get("latent_path"),
        TrainHistory.from_dict(hist) if hist is not None else None,
        doc.get("loss") or {},
    )


def save_network(
    path: Union[str, Path],
    network: R2slNetwork,
    latent_model: RegionalLatentModel,
    history: Optional[TrainHistory] = None,
    *,
    latent_path: Optional[str] = None,
    loss: Optional[Mapping[str, Any]] = None,
) -> None:
    doc = to_document(network, latent_model, history, latent_path=latent_path, loss=loss)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_network(path: Union[str, Path]) -> NetworkDocument:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"bad JSON: {e}", path=str(path)) from None
    return from_document(doc)
