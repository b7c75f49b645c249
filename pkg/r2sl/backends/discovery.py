from __future__ import annotations

import os
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from ..types import RecordStore
from .binstore import BinaryRecordStore, is_binary_records
from .csvstore import CsvRecordStore


@dataclass(frozen=True)
class Candidate:
    """Represents a potential record source in the discovery order."""

    kind: str  # "path-auto", "env-bin", "env-csv"
    ref: str  # path, for debugging
    opener: Callable[[], RecordStore]  # returns an opened store, or raises


def open_path(p: str) -> RecordStore:
    return BinaryRecordStore(p) if is_binary_records(p) else CsvRecordStore(p)


def _resolve_candidates(
    *,
    explicit_path: Optional[str],
    env_bin: Optional[str],
    env_csv: Optional[str],
) -> List[Candidate]:
    """
    Build an ordered list of candidates. Pure function -> easy to unit test.
    An explicit path short-circuits everything else.
    """
    cands: List[Candidate] = []

    if explicit_path:
        p = explicit_path
        cands.append(Candidate("path-auto", p, lambda: open_path(p)))
        return cands

    if env_bin:

        def open_env_bin(p: str = env_bin) -> RecordStore:
            if not is_binary_records(p):
                raise ValueError(f"R2SL_RECORDS_BIN is not a binary record file: {p}")
            return BinaryRecordStore(p)

        cands.append(Candidate("env-bin", env_bin, open_env_bin))

    if env_csv:

        def open_env_csv(p: str = env_csv) -> RecordStore:
            if not Path(p).exists():
                raise FileNotFoundError(f"R2SL_RECORDS not found: {p}")
            return CsvRecordStore(p)

        cands.append(Candidate("env-csv", env_csv, open_env_csv))

    return cands


def discover_records(path: Optional[str]) -> RecordStore:
    cands = _resolve_candidates(
        explicit_path=str(path) if path else None,
        env_bin=os.getenv("R2SL_RECORDS_BIN"),
        env_csv=os.getenv("R2SL_RECORDS"),
    )
    if cands and cands[0].kind == "path-auto":
        # explicit paths surface their own errors (line numbers, bad magic, ...)
        if not Path(cands[0].ref).is_file():
            raise FileNotFoundError(f"no such record file: {cands[0].ref}")
        return cands[0].opener()

    last_err: Optional[Exception] = None
    for c in cands:
        try:
            return c.opener()
        except Exception as e:
            last_err = e
            continue

    raise FileNotFoundError(
        "No QoS record file found. Pass a path or set R2SL_RECORDS_BIN/R2SL_RECORDS."
    ) from last_err
