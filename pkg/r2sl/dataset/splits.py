"""
Density splits.

A split of density d draws round(d * n) training records without replacement from the
n observed records; the remainder is divided into test and validation in proportion to
their fractions, so fractions 2%:78%:20% at density 0.02 reproduce the WS-Dream
D1.1 layout. The training fraction is the density itself and must agree with it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import ConfigError, DataError
from ..nncore.rng import make_rng
from ..types import IntArray, RecordSet

FRACTION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DensitySplit:
    density: float
    train_frac: float
    test_frac: float
    valid_frac: float
    seed: int
    train: IntArray
    test: IntArray
    valid: IntArray

    @property
    def counts(self) -> dict[str, int]:
        return {"train": len(self.train), "test": len(self.test), "valid": len(self.valid)}

    def apply(self, records: RecordSet) -> tuple[RecordSet, RecordSet, RecordSet]:
        return records.subset(self.train), records.subset(self.test), records.subset(self.valid)

    def to_manifest(self) -> dict[str, object]:
        return {
            "version": 1,
            "seed": self.seed,
            "density": self.density,
            "fractions": {
                "train": self.train_frac,
                "test": self.test_frac,
                "valid": self.valid_frac,
            },
            "counts": self.counts,
            "train": self.train.tolist(),
            "test": self.test.tolist(),
            "valid": self.valid.tolist(),
        }

    @classmethod
    def from_manifest(cls, obj: dict[str, object]) -> DensitySplit:
        fr = obj["fractions"]
        assert isinstance(fr, dict)
        return cls(
            density=float(obj["density"]),  # type: ignore[arg-type]
            train_frac=float(fr["train"]),
            test_frac=float(fr["test"]),
            valid_frac=float(fr["valid"]),
            seed=int(obj["seed"]),  # type: ignore[call-overload]
            train=np.asarray(obj["train"], dtype=np.int64),
            test=np.asarray(obj["test"], dtype=np.int64),
            valid=np.asarray(obj["valid"], dtype=np.int64),
        )


def check_fractions(train: float, test: float, valid: float) -> None:
    if min(train, test, valid) < 0:
        raise ConfigError(f"split fractions must be nonnegative: {train}:{test}:{valid}")
    if abs(train + test + valid - 1.0) > FRACTION_TOL:
        raise ConfigError(f"split fractions must sum to 1, got {train + test + valid!r}")


def make_splits(
    records: RecordSet,
    density: float,
    fractions: tuple[float, float, float],
    seed: int,
) -> DensitySplit:
    if not (0.0 < density <= 1.0):
        raise ConfigError(f"density must be in (0, 1], got {density}")
    train_frac, test_frac, valid_frac = fractions
    check_fractions(train_frac, test_frac, valid_frac)
    if abs(train_frac - density) > FRACTION_TOL:
        raise ConfigError(f"train fraction {train_frac} disagrees with density {density}")

    n = len(records)
    n_train = int(round(density * n))
    rest = n - n_train
    held = test_frac + valid_frac
    n_valid = int(round(rest * valid_frac / held)) if held > 0 else 0
    n_test = rest - n_valid if held > 0 else 0

    order = make_rng(seed).permutation(n)
    train = np.sort(order[:n_train])
    test = np.sort(order[n_train : n_train + n_test])
    valid = np.sort(order[n_train + n_test : n_train + n_test + n_valid])
    return DensitySplit(
        density, train_frac, test_frac, valid_frac, seed,
        train.astype(np.int64), test.astype(np.int64), valid.astype(np.int64),
    )


def fractions_for(density: float, valid_frac: float) -> tuple[float, float, float]:
    """train:test:valid with train = density and test taking the remainder."""
    test = 1.0 - density - valid_frac
    if test < -FRACTION_TOL:
        raise ConfigError(f"density {density} + valid fraction {valid_frac} exceed 1")
    return density, max(test, 0.0), valid_frac


def write_split_manifest(
    path: Union[str, Path], split: DensitySplit, *, records: Optional[str] = None
) -> None:
    """`records` names the full record file the indices refer to."""
    doc = split.to_manifest()
    if records is not None:
        doc["records"] = records
    Path(path).write_text(
        json.dumps(doc, separators=(",", ":"), sort_keys=True) + "\n",
        encoding="utf-8",
    )


def read_split_manifest(path: Union[str, Path]) -> DensitySplit:
    try:
        return DensitySplit.from_manifest(json.loads(Path(path).read_text(encoding="utf-8")))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"bad split manifest: {e}", path=str(path)) from None
