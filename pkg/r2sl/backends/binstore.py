#
# r2sl record store: binary columnar format
#
# Layout (little endian):
#   header  <IHHQ + 7Q : magic 'QOSR', version, flags, record count, column offsets
#   value   float64[count]
#   user_id, service_id, user_city, user_as, service_city, service_as   int32[count]
#
# Loading maps the file and views the columns in place, which makes re-reading the
# full WS-Dream matrix (~1.9M records) cheap compared to the CSV parser.
#

from __future__ import annotations

import mmap
import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import DataError
from ..types import RECORD_COLUMNS, RecordSet

MAGIC = 0x52534F51  # 'QOSR'
VERSION = 1
HEADER = struct.Struct("<IHHQ" + "Q" * len(RECORD_COLUMNS))
INT_MAX = np.iinfo(np.int32).max

# value column first so it lands 8-byte aligned right after the header
_ORDER = ("value",) + tuple(n for n in RECORD_COLUMNS if n != "value")

PathLike = Union[str, Path]


def is_binary_records(path: PathLike) -> bool:
    try:
        with open(path, "rb") as f:
            sig = f.read(4)
        return len(sig) == 4 and struct.unpack("<I", sig)[0] == MAGIC
    except OSError:
        return False


def write_records_bin(path: PathLike, records: RecordSet) -> None:
    n = len(records)
    offsets: dict[str, int] = {}
    chunks: list[bytes] = []
    pos = HEADER.size
    for name in _ORDER:
        col = getattr(records, name)
        if name == "value":
            raw = np.ascontiguousarray(col, dtype="<f8").tobytes()
        else:
            if n and int(col.max()) > INT_MAX:
                raise DataError(f"{name} exceeds int32 range")
            raw = np.ascontiguousarray(col, dtype="<i4").tobytes()
        offsets[name] = pos
        chunks.append(raw)
        pos += len(raw)
    flags = 0
    hdr = HEADER.pack(MAGIC, VERSION, flags, n, *(offsets[c] for c in RECORD_COLUMNS))
    with open(path, "wb") as f:
        f.write(hdr)
        for raw in chunks:
            f.write(raw)


class BinaryRecordStore:
    def __init__(self, path: PathLike):
        self.path = str(path)
        self.f = open(self.path, "rb")
        try:
            self.mm = mmap.mmap(self.f.fileno(), 0, access=mmap.ACCESS_READ)
        except ValueError:
            self.f.close()
            raise DataError("empty file", path=self.path) from None
        try:
            self._parse_header()
        except Exception:
            self.close()
            raise

    def _parse_header(self) -> None:
        if len(self.mm) < HEADER.size:
            raise DataError("truncated header", path=self.path)
        tup = HEADER.unpack_from(self.mm, 0)
        if tup[0] != MAGIC:
            raise DataError("bad magic", path=self.path)
        if tup[1] != VERSION:
            raise DataError(f"unsupported version {tup[1]}", path=self.path)
        self.count: int = tup[3]
        self.offsets = dict(zip(RECORD_COLUMNS, tup[4:]))
        for name, off in self.offsets.items():
            width = 8 if name == "value" else 4
            if off + width * self.count > len(self.mm):
                raise DataError(f"column {name} runs past end of file", path=self.path)

    def column(self, name: str) -> np.ndarray:
        dt = "<f8" if name == "value" else "<i4"
        return np.frombuffer(self.mm, dtype=dt, count=self.count, offset=self.offsets[name])

    @property
    def records(self) -> RecordSet:
        # copies, so the returned set outlives close()
        return RecordSet(**{name: self.column(name).copy() for name in RECORD_COLUMNS})

    def close(self) -> None:
        if not self.mm.closed:
            self.mm.close()
        self.f.close()
