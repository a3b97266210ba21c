from __future__ import annotations

import os
import threading
import time
from decimal import Decimal

import pytest

from lsth.connector import (
    CatalogView,
    ConnectionKind,
    ConnectionPool,
    ConnectionSpec,
    DryRunConnection,
    MiniLstConnection,
    open_connection,
)
from lsth.errors import ConfigError, TargetUnreachable

CREATE = "CREATE TABLE t (key BIGINT, val STRING) USING {lst} MODE cow KEY key TARGET 10"


def _spec(tmp_path, kind=ConnectionKind.MINI_LST, **opts):
    return ConnectionSpec(kind, tmp_path / "root", {k: str(v) for k, v in opts.items()})


def test_spec_roundtrip(tmp_path):
    spec = _spec(tmp_path, retry_budget=5)
    assert ConnectionSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("doc", [
    {"kind": "MINI_LST"},
    {"kind": "ODBC", "storage_root": "/x"},
    {"kind": "MINI_LST", "storage_root": "/x", "host": "y"},
])
def test_spec_rejects(doc):
    with pytest.raises(ConfigError):
        ConnectionSpec.from_dict(doc)


def test_kind_is_case_insensitive():
    assert ConnectionSpec.from_dict({"kind": "dry_run", "storage_root": "/x"}).kind is ConnectionKind.DRY_RUN


def test_unwritable_root_is_unreachable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(TargetUnreachable):
        open_connection(ConnectionSpec(ConnectionKind.MINI_LST, blocker / "sub"))


@pytest.mark.skipif(os.geteuid() == 0, reason="root bypasses permission bits")
def test_readonly_root_is_unreachable(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    try:
        with pytest.raises(TargetUnreachable):
            open_connection(ConnectionSpec(ConnectionKind.MINI_LST, ro))
    finally:
        ro.chmod(0o700)


@pytest.mark.parametrize("lst", ["delta", "iceberg", "hudi"])
def test_minilst_results_and_counters(tmp_path, lst):
    src = tmp_path / "in.csv"
    src.write_text("key,val\n1,a\n2,b\n3,c\n")
    conn = open_connection(_spec(tmp_path, base_dir=tmp_path))
    assert isinstance(conn, MiniLstConnection)
    assert conn.execute(CREATE.format(lst=lst)).row_count == 0
    assert conn.current_version("t") == 0
    res = conn.execute("COPY INTO t FROM 'in.csv'")
    assert res.row_count == 3
    assert res.counters.files_written >= 2
    assert conn.current_version("t") == 1
    q = conn.execute("SELECT count(*) FROM t")
    assert q.scalar == Decimal(3)
    assert q.counters.files_written == 0 and q.counters.files_opened >= 1
    rows = conn.execute("SELECT * FROM t WHERE key = 2")
    assert rows.scalar is None and rows.rows == [(2, "b")]
    assert conn.current_version("missing") is None


def test_minilst_catalog(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("key,val\n1,a\n2,b\n")
    conn = open_connection(_spec(tmp_path, base_dir=tmp_path))
    conn.execute("CREATE TABLE t (key BIGINT, val STRING) USING delta MODE mor KEY key TARGET 10")
    conn.execute("COPY INTO t FROM 'in.csv'")
    conn.execute("DELETE FROM t WHERE key IN (1)")
    cat = conn.catalog()
    assert cat.list_tables() == ["t"]
    assert cat.row_count("t") == 1
    assert cat.current_version("t") == 2
    assert cat.source_rows(str(src)) == 2


def test_base_catalog_is_unsupported():
    cat = CatalogView()
    for call in (cat.list_tables, lambda: cat.row_count("t"), lambda: cat.current_version("t")):
        with pytest.raises(NotImplementedError):
            call()


def test_closed_connection(tmp_path):
    conn = open_connection(_spec(tmp_path))
    conn.close()
    with pytest.raises(TargetUnreachable):
        conn.execute("SELECT count(*) FROM t")


def test_dry_run_writes_script_and_tracks_versions(tmp_path):
    conn = open_connection(_spec(tmp_path, kind=ConnectionKind.DRY_RUN))
    assert isinstance(conn, DryRunConnection)
    conn.label = "p-0"
    conn.execute(CREATE.format(lst="delta"))
    conn.execute("COPY INTO t FROM 'x.csv';")
    conn.execute("this is not sql")
    res = conn.execute("MERGE INTO t USING 'y.csv'")
    assert res.row_count == 0 and res.counters.files_opened == 0
    assert conn.current_version("t") == 2
    script = (tmp_path / "root" / "script_p-0.sql").read_text()
    assert script.splitlines() == [
        CREATE.format(lst="delta") + ";", "COPY INTO t FROM 'x.csv';", "this is not sql;", "MERGE INTO t USING 'y.csv';"]


def test_pool_bounds_and_peak(tmp_path):
    pool = ConnectionPool(_spec(tmp_path), 2)
    inside = []
    peak = [0]
    lock = threading.Lock()

    def work(i):
        c = pool.acquire(f"s{i}")
        with lock:
            inside.append(i)
            peak[0] = max(peak[0], len(inside))
        time.sleep(0.01)
        with lock:
            inside.remove(i)
        pool.release(c)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2
    assert pool.peak_busy == 2
    assert pool.busy == 0
    pool.close()
    assert pool.probe().closed


def test_pool_size_must_be_positive(tmp_path):
    with pytest.raises(ConfigError):
        ConnectionPool(_spec(tmp_path), 0)


def test_dry_run_pool_shares_versions(tmp_path):
    pool = ConnectionPool(_spec(tmp_path, kind=ConnectionKind.DRY_RUN), 2)
    a = pool.acquire("a")
    b = pool.acquire("b")
    a.execute(CREATE.format(lst="hudi"))
    b.execute("COPY INTO t FROM 'f.csv'")
    assert a.current_version("t") == b.current_version("t") == pool.probe().current_version("t") == 1
