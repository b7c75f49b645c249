# tests/test_discovery.py
from __future__ import annotations
import pytest

from r2sl.api import BinaryRecordStore, CsvRecordStore, open_records, write_records
from r2sl.api import write_records_bin
from r2sl.backends.discovery import _resolve_candidates


@pytest.fixture
def records_csv(tmp_path, records):
    p = tmp_path / "records.csv"
    write_records(p, records)
    return p


@pytest.fixture
def records_bin(tmp_path, records):
    p = tmp_path / "records.bin"
    write_records_bin(p, records)
    return p


def _clear_env(monkeypatch):
    monkeypatch.delenv("R2SL_RECORDS_BIN", raising=False)
    monkeypatch.delenv("R2SL_RECORDS", raising=False)


def test_open_records_env_csv(monkeypatch, records_csv, records):
    _clear_env(monkeypatch)
    monkeypatch.setenv("R2SL_RECORDS", str(records_csv))
    store = open_records()
    assert isinstance(store, CsvRecordStore)
    assert store.records.equals(records)


def test_open_records_env_bin(monkeypatch, records_bin, records):
    _clear_env(monkeypatch)
    monkeypatch.setenv("R2SL_RECORDS_BIN", str(records_bin))
    store = open_records()
    assert isinstance(store, BinaryRecordStore)
    assert store.records.equals(records)
    store.close()


def test_open_records_env_bin_preferred(monkeypatch, records_bin, records_csv):
    monkeypatch.setenv("R2SL_RECORDS_BIN", str(records_bin))
    monkeypatch.setenv("R2SL_RECORDS", str(records_csv))
    store = open_records()
    assert isinstance(store, BinaryRecordStore)
    store.close()


def test_open_records_env_bin_falls_back_to_csv(monkeypatch, records_csv, tmp_path):
    monkeypatch.setenv("R2SL_RECORDS_BIN", str(tmp_path / "nonexistent"))
    monkeypatch.setenv("R2SL_RECORDS", str(records_csv))
    assert isinstance(open_records(), CsvRecordStore)


def test_open_records_env_csv_missing(monkeypatch, tmp_path):
    _clear_env(monkeypatch)
    monkeypatch.setenv("R2SL_RECORDS", str(tmp_path / "nonexistent"))
    with pytest.raises(FileNotFoundError):
        open_records()


def test_open_records_env_bin_missing(monkeypatch, tmp_path):
    _clear_env(monkeypatch)
    monkeypatch.setenv("R2SL_RECORDS_BIN", str(tmp_path / "nonexistent"))
    with pytest.raises(FileNotFoundError):
        open_records()


def test_open_records_env_csv_as_bin(monkeypatch, records_csv):
    _clear_env(monkeypatch)
    monkeypatch.setenv("R2SL_RECORDS_BIN", str(records_csv))
    with pytest.raises(FileNotFoundError):
        open_records()


def test_open_records_env_bin_as_csv(monkeypatch, records_bin):
    _clear_env(monkeypatch)
    monkeypatch.setenv("R2SL_RECORDS", str(records_bin))
    with pytest.raises(FileNotFoundError):
        open_records()


def test_open_records_explicit_paths(monkeypatch, records_csv, records_bin):
    _clear_env(monkeypatch)
    assert isinstance(open_records(str(records_csv)), CsvRecordStore)
    store = open_records(str(records_bin))
    assert isinstance(store, BinaryRecordStore)
    store.close()


def test_open_records_nothing_configured(monkeypatch):
    _clear_env(monkeypatch)
    with pytest.raises(FileNotFoundError, match="R2SL_RECORDS_BIN"):
        open_records()


def test_open_records_missing_file(monkeypatch, tmp_path):
    _clear_env(monkeypatch)
    with pytest.raises(FileNotFoundError):
        open_records(str(tmp_path / "nonexistent"))


def test_explicit_path_short_circuits_env():
    cands = _resolve_candidates(explicit_path="x.csv", env_bin="a.bin", env_csv="b.csv")
    assert [c.kind for c in cands] == ["path-auto"]
    cands = _resolve_candidates(explicit_path=None, env_bin="a.bin", env_csv="b.csv")
    assert [(c.kind, c.ref) for c in cands] == [("env-bin", "a.bin"), ("env-csv", "b.csv")]
    assert _resolve_candidates(explicit_path=None, env_bin=None, env_csv=None) == []
