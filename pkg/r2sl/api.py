from __future__ import annotations

from typing import Optional

from .backends.binstore import BinaryRecordStore, write_records_bin
from .backends.csvstore import CsvRecordStore, read_records, write_records
from .types import RecordStore


def open_records(path: Optional[str] = None) -> RecordStore:
    from .backends.discovery import discover_records

    return discover_records(path)


__all__ = [
    "BinaryRecordStore",
    "CsvRecordStore",
    "RecordStore",
    "open_records",
    "read_records",
    "write_records",
    "write_records_bin",
]
