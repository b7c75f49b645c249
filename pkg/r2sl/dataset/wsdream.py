#
# WS-Dream style input parsing
#
# Matrix file: whitespace separated reals, one user per line, one column per service,
# missing cells hold a sentinel (-1 in WS-Dream).
# Metadata file: `id <TAB> city_label <TAB> as_label`, header optional. WS-Dream's own
# userlist/wslist files also work: with a named header the city column is the first of
# {city, country} and the AS column is the one named "as".
#

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import DataError
from ..types import REGION_KINDS, Codebooks, RecordSet, RegionCodebook

log = logging.getLogger(__name__)

PathLike = Union[str, Path]
TextSource = Union[str, Iterable[str]]

DEFAULT_SENTINEL = -1.0
DEFAULT_RT_CAP = 20.0


@dataclass(frozen=True)
class RegionRow:
    id: int
    city: str
    asn: str


@dataclass(frozen=True)
class ParseResult:
    records: RecordSet
    codebooks: Codebooks
    n_users: int
    n_services: int
    dropped_over_cap: int
    dropped_nonpositive: int


def _lines(src: TextSource) -> list[str]:
    if isinstance(src, str):
        return src.splitlines()
    return [line.rstrip("\n") for line in src]


def _header_name(cell: str) -> str:
    return cell.strip().strip("[]").strip().lower()


def _is_rule(line: str) -> bool:
    s = line.strip()
    return bool(s) and set(s) <= set("=-")


def parse_metadata(src: TextSource, *, name: str = "<metadata>") -> list[RegionRow]:
    """
    Parse a region table into rows ordered by id. Ids must be exactly 0..n-1.
    """
    id_col, city_col, as_col = 0, 1, 2
    rows: dict[int, RegionRow] = {}
    first = True
    for lineno, raw in enumerate(_lines(src), start=1):
        if not raw.strip() or _is_rule(raw):
            continue
        cells = raw.split("\t")
        if first:
            first = False
            try:
                int(cells[0].strip())
            except ValueError:
                names = [_header_name(c) for c in cells]
                city_col = next((i for i, n in enumerate(names) if n in ("city", "country")), -1)
                as_col = names.index("as") if "as" in names else -1
                if city_col < 0 or as_col < 0:
                    if len(names) == 3:
                        city_col, as_col = 1, 2
                    else:
                        raise DataError(
                            "header names neither a city/country nor an AS column",
                            path=name,
                            line=lineno,
                        ) from None
                continue
        need = max(id_col, city_col, as_col) + 1
        if len(cells) < need:
            raise DataError(
                f"expected at least {need} tab-separated fields", path=name, line=lineno
            )
        try:
            rid = int(cells[id_col].strip())
        except ValueError:
            raise DataError(f"bad id {cells[id_col]!r}", path=name, line=lineno) from None
        if rid in rows:
            raise DataError(f"duplicate id {rid}", path=name, line=lineno)
        rows[rid] = RegionRow(rid, cells[city_col].strip(), cells[as_col].strip())

    ordered = [rows[i] for i in sorted(rows)]
    for expect, r in enumerate(ordered):
        if r.id != expect:
            raise DataError(f"id gap: expected id {expect}, found {r.id}", path=name)
    return ordered


def build_codebooks(users: Sequence[RegionRow], services: Sequence[RegionRow]) -> Codebooks:
    return Codebooks(
        user_city=RegionCodebook.from_labels("user_city", (r.city for r in users)),
        user_as=RegionCodebook.from_labels("user_as", (r.asn for r in users)),
        service_city=RegionCodebook.from_labels("service_city", (r.city for r in services)),
        service_as=RegionCodebook.from_labels("service_as", (r.asn for r in services)),
    )


def _parse_row(raw: str, width: int, name: str, lineno: int) -> np.ndarray:
    toks = raw.split()
    if len(toks) != width:
        raise DataError(f"expected {width} columns, got {len(toks)}", path=name, line=lineno)
    try:
        v = np.array(toks, dtype=np.float64)
    except ValueError:
        for col, tok in enumerate(toks):
            try:
                float(tok)
            except ValueError:
                raise DataError(
                    f"unparseable numeric cell {tok!r} in column {col}", path=name, line=lineno
                ) from None
        raise  # pragma: no cover
    bad = np.flatnonzero(~np.isfinite(v))
    if len(bad):
        col = int(bad[0])
        raise DataError(
            f"non-finite numeric cell {toks[col]!r} in column {col}", path=name, line=lineno
        )
    return v


def parse_matrix(
    matrix: TextSource,
    user_meta: TextSource,
    service_meta: TextSource,
    *,
    missing_sentinel: float = DEFAULT_SENTINEL,
    value_cap: float = DEFAULT_RT_CAP,
    names: tuple[str, str, str] = ("<matrix>", "<user-meta>", "<service-meta>"),
) -> ParseResult:
    users = parse_metadata(user_meta, name=names[1])
    services = parse_metadata(service_meta, name=names[2])
    books = build_codebooks(users, services)

    u_city = np.array([books.user_city.encode(r.city) for r in users], dtype=np.int64)
    u_as = np.array([books.user_as.encode(r.asn) for r in users], dtype=np.int64)
    s_city = np.array([books.service_city.encode(r.city) for r in services], dtype=np.int64)
    s_as = np.array([books.service_as.encode(r.asn) for r in services], dtype=np.int64)

    width = len(services)
    uids: list[np.ndarray] = []
    sids: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    over_cap = nonpos = 0
    row = 0
    for lineno, raw in enumerate(_lines(matrix), start=1):
        if not raw.strip():
            continue
        if row >= len(users):
            raise DataError(
                f"matrix has more rows than the {len(users)} users in metadata",
                path=names[0],
                line=lineno,
            )
        v = _parse_row(raw, width, names[0], lineno)
        observed = v != missing_sentinel
        cap_mask = observed & (v > value_cap)
        neg_mask = observed & (v <= 0)
        keep = observed & ~cap_mask & ~neg_mask
        over_cap += int(cap_mask.sum())
        nonpos += int(neg_mask.sum())
        cols = np.flatnonzero(keep)
        uids.append(np.full(len(cols), row, dtype=np.int64))
        sids.append(cols)
        vals.append(v[cols])
        row += 1
    if row != len(users):
        raise DataError(
            f"matrix has {row} rows but metadata lists {len(users)} users", path=names[0]
        )

    uid = np.concatenate(uids) if uids else np.zeros(0, dtype=np.int64)
    sid = np.concatenate(sids) if sids else np.zeros(0, dtype=np.int64)
    records = RecordSet(
        user_id=uid,
        service_id=sid,
        value=np.concatenate(vals) if vals else np.zeros(0),
        user_city=u_city[uid],
        user_as=u_as[uid],
        service_city=s_city[sid],
        service_as=s_as[sid],
    )
    log.info(
        "parsed %d records from %dx%d matrix (%d over cap %g, %d non-positive dropped)",
        len(records), len(users), width, over_cap, value_cap, nonpos,
    )
    return ParseResult(records, books, len(users), width, over_cap, nonpos)


def parse_matrix_files(
    matrix_path: PathLike,
    user_meta_path: PathLike,
    service_meta_path: PathLike,
    *,
    missing_sentinel: float = DEFAULT_SENTINEL,
    value_cap: float = DEFAULT_RT_CAP,
) -> ParseResult:
    paths = (str(matrix_path), str(user_meta_path), str(service_meta_path))
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(p)
    with (
        open(paths[0], encoding="utf-8", errors="replace") as m,
        open(paths[1], encoding="utf-8", errors="replace") as u,
        open(paths[2], encoding="utf-8", errors="replace") as s,
    ):
        return parse_matrix(
            m, u, s, missing_sentinel=missing_sentinel, value_cap=value_cap, names=paths
        )


def write_codebooks(path: PathLike, books: Codebooks) -> None:
    payload = {"version": 1, **{k: list(books.get(k).labels) for k in REGION_KINDS}}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_codebooks(path: PathLike) -> Codebooks:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return Codebooks(**{k: RegionCodebook(k, tuple(obj[k])) for k in REGION_KINDS})
    except KeyError as e:
        raise DataError(f"codebook file lacks {e}", path=str(path)) from None


def load_codebooks_near(records_path: PathLike) -> Optional[Codebooks]:
    """codebooks.json next to a record file, if present."""
    p = Path(records_path).with_name("codebooks.json")
    return read_codebooks(p) if p.is_file() else None
