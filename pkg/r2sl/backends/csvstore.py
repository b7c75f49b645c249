#
# r2sl record store: canonical CSV interchange format
#
#   user_id,service_id,value,user_city,user_as,service_city,service_as
#
# Values are written with repr(), the shortest string that round-trips a float64,
# so write -> read is lossless.
#

from __future__ import annotations

import csv
from collections.abc import Iterator
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import DataError
from ..types import RECORD_COLUMNS, RecordSet

PathLike = Union[str, Path]


def write_records(path: PathLike, records: RecordSet) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        cols = [getattr(records, name).tolist() for name in RECORD_COLUMNS]
        for row in zip(*cols):
            w.writerow(
                [repr(float(v)) if i == 2 else str(int(v)) for i, v in enumerate(row)]
            )


def _rows(path: str) -> Iterator[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if row:
                yield lineno, row


def read_records(path: PathLike) -> RecordSet:
    p = str(path)
    ints: dict[str, list[int]] = {n: [] for n in RECORD_COLUMNS if n != "value"}
    values: list[float] = []
    header_seen = False
    for lineno, row in _rows(p):
        if not header_seen:
            if tuple(c.strip() for c in row) != RECORD_COLUMNS:
                raise DataError(
                    f"bad header, expected {','.join(RECORD_COLUMNS)}", path=p, line=lineno
                )
            header_seen = True
            continue
        if len(row) != len(RECORD_COLUMNS):
            raise DataError(
                f"expected {len(RECORD_COLUMNS)} fields, got {len(row)}", path=p, line=lineno
            )
        try:
            for name, cell in zip(RECORD_COLUMNS, row):
                if name == "value":
                    values.append(float(cell))
                else:
                    ints[name].append(int(cell))
        except ValueError as e:
            raise DataError(f"unparseable field: {e}", path=p, line=lineno) from None
    if not header_seen:
        raise DataError("empty record file", path=p)
    vals = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise DataError("record values must be finite and positive", path=p)
    for name, col in ints.items():
        if col and min(col) < 0:
            raise DataError(f"negative {name}", path=p)
    return RecordSet(value=vals, **ints)


class CsvRecordStore:
    def __init__(self, path: PathLike):
        self.path = str(path)
        self._records = read_records(self.path)

    @property
    def records(self) -> RecordSet:
        return self._records

    def close(self) -> None:
        pass
