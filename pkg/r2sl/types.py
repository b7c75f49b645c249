from __future__ import annotations

import hashlib
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

import numpy as np
import numpy.typing as npt

from .errors import DataError

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

REGION_KINDS = ("user_city", "user_as", "service_city", "service_as")
RECORD_COLUMNS = (
    "user_id",
    "service_id",
    "value",
    "user_city",
    "user_as",
    "service_city",
    "service_as",
)


@dataclass(frozen=True, slots=True)
class QosRecord:
    user_id: int
    service_id: int
    value: float
    user_city: int
    user_as: int
    service_city: int
    service_as: int


def _as_int(a: object) -> IntArray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class RecordSet:
    """Columnar view of a QosRecord list; every column has one entry per record."""

    user_id: IntArray
    service_id: IntArray
    value: FloatArray
    user_city: IntArray
    user_as: IntArray
    service_city: IntArray
    service_as: IntArray

    def __post_init__(self) -> None:
        for name in RECORD_COLUMNS:
            raw = getattr(self, name)
            arr = (
                np.ascontiguousarray(np.asarray(raw, dtype=np.float64))
                if name == "value"
                else _as_int(raw)
            )
            if arr.ndim != 1:
                raise DataError(f"column {name} must be one-dimensional")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.value)
        for name in RECORD_COLUMNS:
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")

    @classmethod
    def empty(cls) -> RecordSet:
        return cls(*([np.zeros(0)] * len(RECORD_COLUMNS)))

    @classmethod
    def from_records(cls, records: Iterable[QosRecord]) -> RecordSet:
        rows = list(records)
        if not rows:
            return cls.empty()
        cols = {name: [getattr(r, name) for r in rows] for name in RECORD_COLUMNS}
        return cls(**cols)

    def __len__(self) -> int:
        return len(self.value)

    def __getitem__(self, i: int) -> QosRecord:
        return QosRecord(
            user_id=int(self.user_id[i]),
            service_id=int(self.service_id[i]),
            value=float(self.value[i]),
            user_city=int(self.user_city[i]),
            user_as=int(self.user_as[i]),
            service_city=int(self.service_city[i]),
            service_as=int(self.service_as[i]),
        )

    def __iter__(self) -> Iterator[QosRecord]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices: npt.ArrayLike) -> RecordSet:
        idx = _as_int(indices)
        return RecordSet(**{name: getattr(self, name)[idx] for name in RECORD_COLUMNS})

    def codes(self, kind: str) -> IntArray:
        if kind not in REGION_KINDS:
            raise KeyError(kind)
        arr: IntArray = getattr(self, kind)
        return arr

    def fingerprint(self) -> str:
        """Content hash over all columns (little-endian, fixed dtypes)."""
        h = hashlib.sha256()
        h.update(len(self).to_bytes(8, "little"))
        for name in RECORD_COLUMNS:
            arr = getattr(self, name)
            dt = "<f8" if name == "value" else "<i8"
            h.update(name.encode("ascii"))
            h.update(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return h.hexdigest()

    def equals(self, other: RecordSet) -> bool:
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in RECORD_COLUMNS
        )


@dataclass(frozen=True)
class RegionCodebook:
    """Dense, deterministic mapping of raw region labels to codes (sorted labels)."""

    kind: str
    labels: tuple[str, ...]
    raw_to_index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in REGION_KINDS:
            raise DataError(f"unknown codebook kind {self.kind!r}")
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"codebook {self.kind} has duplicate labels")
        object.__setattr__(self, "raw_to_index", {s: i for i, s in enumerate(self.labels)})

    @classmethod
    def from_labels(cls, kind: str, labels: Iterable[str]) -> RegionCodebook:
        return cls(kind, tuple(sorted(set(labels))))

    @classmethod
    def numbered(cls, kind: str, size: int) -> RegionCodebook:
        """Labels "0".."size-1", zero padded so label order matches code order."""
        width = len(str(max(size - 1, 0)))
        return cls(kind, tuple(f"{i:0{width}d}" for i in range(size)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def encode(self, label: str) -> int:
        return self.raw_to_index[label]


@dataclass(frozen=True)
class Codebooks:
    user_city: RegionCodebook
    user_as: RegionCodebook
    service_city: RegionCodebook
    service_as: RegionCodebook

    @classmethod
    def infer(cls, records: RecordSet) -> Codebooks:
        """Placeholder codebooks sized by the largest code seen."""
        books = {}
        for kind in REGION_KINDS:
            codes = records.codes(kind)
            books[kind] = RegionCodebook.numbered(kind, int(codes.max()) + 1 if len(codes) else 0)
        return cls(**books)

    @classmethod
    def numbered(cls, sizes: Mapping[str, int]) -> Codebooks:
        return cls(**{kind: RegionCodebook.numbered(kind, sizes[kind]) for kind in REGION_KINDS})

    def get(self, kind: str) -> RegionCodebook:
        if kind not in REGION_KINDS:
            raise KeyError(kind)
        book: RegionCodebook = getattr(self, kind)
        return book

    def sizes(self) -> dict[str, int]:
        return {kind: self.get(kind).size for kind in REGION_KINDS}

    def check(self, records: RecordSet) -> None:
        """Raise DataError if any region code falls outside its codebook."""
        for kind in REGION_KINDS:
            codes = records.codes(kind)
            if len(codes) and (codes.min() < 0 or codes.max() >= self.get(kind).size):
                raise DataError(
                    f"{kind} code out of range [0, {self.get(kind).size}) "
                    f"(saw {int(codes.min())}..{int(codes.max())})"
                )


@dataclass(frozen=True)
class TableSizes:
    """Row counts of every embedding table the network needs."""

    n_users: int
    n_services: int
    n_user_city: int
    n_user_as: int
    n_service_city: int
    n_service_as: int

    @classmethod
    def from_records(
        cls, records: RecordSet, codebooks: Optional[Codebooks] = None
    ) -> TableSizes:
        books = codebooks if codebooks is not None else Codebooks.infer(records)
        return cls(
            n_users=int(records.user_id.max()) + 1 if len(records) else 0,
            n_services=int(records.service_id.max()) + 1 if len(records) else 0,
            n_user_city=books.user_city.size,
            n_user_as=books.user_as.size,
            n_service_city=books.service_city.size,
            n_service_as=books.service_as.size,
        )

    def rows(self, table: str) -> int:
        field = {"user_id": "n_users", "service_id": "n_services"}.get(table, f"n_{table}")
        value: int = getattr(self, field)
        return value


@runtime_checkable
class Predictor(Protocol):
    def predict(self, records: RecordSet) -> FloatArray: ...


@runtime_checkable
class RecordStore(Protocol):
    path: str

    @property
    def records(self) -> RecordSet: ...
    def close(self) -> None: ...
