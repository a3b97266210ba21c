from __future__ import annotations

import math
import tempfile
import threading
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import LAYOUT_MODES, LAYOUT_MODE_IDS, small_desc
from lsth.engine import Condition, Engine, Layout, WriteMode
from lsth.engine.counters import StorageCounters
from lsth.errors import (
    ConflictError,
    ExecError,
    SchemaMismatch,
    TableExists,
    UnknownTable,
    VersionNotFound,
)
from oracles import KeyedFold, data_files_on_disk, delta_expected_metadata_reads, iceberg_manifest_count

ops_strategy = st.lists(
    st.tuples(
        st.lists(st.tuples(st.integers(0, 60), st.text("abc", max_size=3)), max_size=12),
        st.lists(st.integers(0, 60), max_size=5),
    ),
    min_size=1,
    max_size=6,
)


def _rows(result) -> Counter:
    return Counter(result.rows)


def _seed(engine: Engine, layout: Layout, mode: WriteMode, n: int = 30, target: int = 10) -> KeyedFold:
    engine.create_table(small_desc(layout, mode, target))
    base = [(i, f"v{i}") for i in range(n)]
    engine.load_append("t", base)
    fold = KeyedFold()
    fold.append(base)
    return fold


def test_create_then_exists(engine):
    engine.create_table(small_desc(Layout.DELTA_STYLE, WriteMode.COW))
    with pytest.raises(TableExists):
        engine.create_table(small_desc(Layout.ICEBERG_STYLE, WriteMode.COW))
    snap = engine.create_table(small_desc(Layout.DELTA_STYLE, WriteMode.COW), if_not_exists=True)
    assert snap.version == 0
    assert engine.list_tables() == ["t"]


def test_drop_and_unknown(engine):
    engine.create_table(small_desc(Layout.HUDI_STYLE, WriteMode.MOR))
    engine.drop_table("t")
    with pytest.raises(UnknownTable):
        engine.scan("t")
    with pytest.raises(UnknownTable):
        engine.drop_table("t")
    engine.drop_table("t", if_exists=True)


def test_invalid_table_name(engine):
    with pytest.raises(ExecError):
        engine.read_metadata("../etc")


def test_schema_mismatch_on_bad_row(engine):
    engine.create_table(small_desc(Layout.DELTA_STYLE, WriteMode.COW))
    with pytest.raises(SchemaMismatch):
        engine.load_append("t", [(1, "a", "extra")])
    with pytest.raises(SchemaMismatch):
        engine.load_append("t", [("not-an-int", "a")])


def test_append_chunks_by_target(engine, layout_mode):
    layout, mode = layout_mode
    _seed(engine, layout, mode, n=25, target=10)
    snap = engine.read_metadata("t")
    assert snap.version == 1
    assert sorted(f.row_count for f in snap.live_files.values()) == [5, 10, 10]


def test_merge_matches_fold(engine, layout_mode):
    layout, mode = layout_mode
    fold = _seed(engine, layout, mode)
    ups = [(3, "x"), (17, "y"), (100, "new")]
    engine.merge("t", ups, [5, 17])
    fold.merge(ups, [5, 17])
    assert _rows(engine.scan("t")) == fold.multiset()


def test_upsert_and_delete_same_key_deletes(engine):
    fold = _seed(engine, Layout.DELTA_STYLE, WriteMode.MOR)
    engine.merge("t", [(4, "z")], [4])
    fold.merge([(4, "z")], [4])
    assert 4 not in {r[0] for r in engine.scan("t").rows}
    assert _rows(engine.scan("t")) == fold.multiset()


@pytest.mark.parametrize("layout,mode", LAYOUT_MODES, ids=LAYOUT_MODE_IDS)
@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(ops=ops_strategy)
def test_random_merges_match_fold(layout, mode, ops):
    with tempfile.TemporaryDirectory() as d:
        eng = Engine(Path(d))
        fold = _seed(eng, layout, mode)
        for ups, dels in ops:
            eng.merge("t", ups, dels)
            fold.merge(ups, dels)
        assert _rows(eng.scan("t")) == fold.multiset()


def test_cow_leaves_no_deltas_and_mor_does(engine):
    _seed(engine, Layout.DELTA_STYLE, WriteMode.COW)
    engine.merge("t", [(1, "q")], [])
    assert engine.read_metadata("t").delta_count == 0

    other = Engine(engine.root.parent / "other")
    _seed(other, Layout.DELTA_STYLE, WriteMode.MOR)
    other.merge("t", [(1, "q")], [2])
    snap = other.read_metadata("t")
    # keys 1 and 2 share a file, so one delta
    assert snap.delta_count == 1


def test_mor_one_delta_per_affected_file(engine):
    _seed(engine, Layout.ICEBERG_STYLE, WriteMode.MOR, n=30, target=10)
    engine.merge("t", [(1, "a"), (11, "b")], [21])
    assert engine.read_metadata("t").delta_count == 3


def test_hudi_tops_up_small_files(engine):
    _seed(engine, Layout.HUDI_STYLE, WriteMode.COW, n=25, target=10)
    engine.merge("t", [(100 + i, "n") for i in range(5)], [])
    snap = engine.read_metadata("t")
    assert sorted(f.row_count for f in snap.live_files.values()) == [10, 10, 10]


def test_non_hudi_inserts_open_new_files(engine):
    _seed(engine, Layout.DELTA_STYLE, WriteMode.COW, n=25, target=10)
    engine.merge("t", [(100 + i, "n") for i in range(5)], [])
    snap = engine.read_metadata("t")
    assert sorted(f.row_count for f in snap.live_files.values()) == [5, 5, 10, 10]


# -- pruning -------------------------------------------------------------------

predicate_strategy = st.one_of(
    st.builds(lambda v: [Condition("key", "=", v)], st.integers(-5, 70)),
    st.builds(lambda a, b: [Condition("key", "between", min(a, b), max(a, b))], st.integers(-5, 70), st.integers(-5, 70)),
    st.builds(lambda op, v: [Condition("key", op, v)], st.sampled_from(["<", "<=", ">", ">=", "!="]), st.integers(-5, 70)),
    st.builds(lambda vs: [Condition("key", "in", frozenset(vs))], st.sets(st.integers(-5, 70), max_size=4)),
    st.builds(lambda v: [Condition("val", "=", v)], st.text("abcvx0123456789", max_size=3)),
)


@pytest.mark.parametrize("layout,mode", LAYOUT_MODES, ids=LAYOUT_MODE_IDS)
@settings(max_examples=25, deadline=None)
@given(pred=predicate_strategy)
def test_pruned_scan_equals_filtered_full_scan(layout, mode, pred):
    with tempfile.TemporaryDirectory() as d:
        eng = Engine(Path(d))
        _seed(eng, layout, mode, n=40, target=8)
        eng.merge("t", [(2, "x"), (33, "y"), (55, "z")], [9])
        full = eng.scan("t")
        expected = Counter(r for r in full.rows if all(c.test(r[0] if c.column == "key" else r[1]) for c in pred))
        pruned = eng.scan("t", pred)
        assert Counter(pruned.rows) == expected
        assert pruned.files_scanned <= full.files_scanned


def test_point_lookup_prunes_to_one_file(engine):
    _seed(engine, Layout.DELTA_STYLE, WriteMode.COW, n=100, target=10)
    res = engine.scan("t", [Condition("key", "=", 42)])
    assert res.rows == [(42, "v42")]
    assert res.files_scanned == 1


# -- time travel and maintenance --------------------------------------------------


def test_time_travel_every_version(engine, layout_mode):
    layout, mode = layout_mode
    fold = _seed(engine, layout, mode)
    recorded = {1: fold.multiset()}
    for i in range(12):
        ups = [(i * 3, f"r{i}"), (200 + i, "ins")]
        snap = engine.merge("t", ups, [i * 3 + 1])
        fold.merge(ups, [i * 3 + 1])
        recorded[snap.version] = fold.multiset()
    for v, expect in recorded.items():
        assert _rows(engine.scan("t", asof_version=v)) == expect
    assert engine.scan("t", asof_version=0).rows == []
    with pytest.raises(VersionNotFound):
        engine.scan("t", asof_version=99)


def test_optimize_compacts_and_preserves_rows(engine, layout_mode):
    layout, mode = layout_mode
    fold = _seed(engine, layout, mode, n=30, target=10)
    for i in range(5):
        engine.merge("t", [(i, "u"), (300 + i, "i")], [10 + i])
        fold.merge([(i, "u"), (300 + i, "i")], [10 + i])
    before = _rows(engine.scan("t"))
    snap = engine.optimize("t")
    assert snap.delta_count == 0
    assert _rows(engine.scan("t")) == before == fold.multiset()
    total = sum(before.values())
    assert len(snap.live_files) <= math.ceil(total / 10) + 1


def test_optimize_single_full_file_is_noop(engine):
    _seed(engine, Layout.DELTA_STYLE, WriteMode.COW, n=10, target=10)
    before = engine.read_metadata("t")
    after = engine.optimize("t")
    assert after.version == before.version + 1
    assert set(after.live_files) == set(before.live_files)


def test_vacuum_deletes_unreachable_files(engine, layout_mode):
    layout, mode = layout_mode
    _seed(engine, layout, mode)
    for i in range(4):
        engine.merge("t", [(i, "u")], [20 + i])
    engine.optimize("t")
    current = engine.current_version("t")
    snap = engine.vacuum("t", 1)
    assert snap.version == current + 1
    tdir = engine.root / "t"
    keep = set()
    for s in engine.history("t"):
        keep |= s.referenced_file_ids()
    # reachability oracle: every retained snapshot is fully backed on disk,
    # and nothing outside the retained set is left behind
    assert data_files_on_disk(tdir) == keep
    assert _rows(engine.scan("t", asof_version=snap.version - 1)) == _rows(engine.scan("t"))
    with pytest.raises(VersionNotFound):
        engine.scan("t", asof_version=1)


def test_vacuum_negative_retain(engine):
    _seed(engine, Layout.DELTA_STYLE, WriteMode.COW)
    with pytest.raises(ExecError):
        engine.vacuum("t", -1)


# -- concurrency -------------------------------------------------------------------


def test_disjoint_commits_rebase(engine):
    _seed(engine, Layout.DELTA_STYLE, WriteMode.MOR, n=30, target=10)
    other = Engine(engine.root)
    fired = []

    def sneak(table, version):
        if not fired:
            fired.append(version)
            other.merge("t", [(25, "other")], [])

    engine.before_publish = sneak
    snap = engine.merge("t", [(1, "mine")], [])
    assert snap.version == 3
    rows = dict(engine.scan("t").rows)
    assert rows[1] == "mine" and rows[25] == "other"


def test_overlapping_merge_conflicts(engine, layout_mode):
    layout, mode = layout_mode
    _seed(engine, layout, mode, n=30, target=10)
    other = Engine(engine.root)
    fired = []

    def sneak(table, version):
        if not fired:
            fired.append(version)
            other.merge("t", [(1, "other")], [])

    engine.before_publish = sneak
    with pytest.raises(ConflictError):
        engine.merge("t", [(2, "mine")], [])
    assert dict(engine.scan("t").rows)[1] == "other"
    assert engine.current_version("t") == 2


def test_retry_budget_exhausted(engine):
    _seed(engine, Layout.HUDI_STYLE, WriteMode.COW)
    other = Engine(engine.root)
    attempts = []

    def always(table, version):
        attempts.append(version)
        other.load_append("t", [(1000 + len(attempts), "x")])

    engine.before_publish = always
    engine.retry_budget = 3
    with pytest.raises(ConflictError, match="retry budget"):
        engine.load_append("t", [(999, "y")])
    assert len(attempts) == 4


def test_threaded_appends_are_serial(engine, layout_mode):
    layout, mode = layout_mode
    engine.create_table(small_desc(layout, mode))
    engines = [Engine(engine.root, retry_budget=50) for _ in range(2)]

    def work(i):
        engines[i % 2].load_append("t", [(i, f"s{i}")])

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert engine.current_version("t") == 4
    assert [s.version for s in engine.history("t")] == list(range(5))
    assert sorted(engine.scan("t").rows) == [(i, f"s{i}") for i in range(4)]


# -- counters and metadata accounting --------------------------------------------------


def test_counters_arithmetic():
    a = StorageCounters(1, 2, 3, 4, 5)
    b = StorageCounters(1, 1, 1, 1, 1)
    assert (a - b) + b == a
    assert StorageCounters.from_dict(a.as_dict()) == a
    with pytest.raises(ValueError):
        StorageCounters.from_dict({"nope": 1})


def test_delta_checkpoint_bounds_replay(engine):
    engine.create_table(small_desc(Layout.DELTA_STYLE, WriteMode.COW))
    for i in range(13):
        engine.load_append("t", [(i, "x")])
    tdir = engine.root / "t"
    assert (tdir / "meta" / f"{10:020d}.checkpoint").exists()
    before = engine.counters.copy()
    engine.read_metadata("t")
    delta = engine.counters - before
    assert delta.list_calls == 1
    assert delta.files_opened == delta_expected_metadata_reads(tdir, 13) == 4


def test_iceberg_metadata_reads(engine):
    engine.create_table(small_desc(Layout.ICEBERG_STYLE, WriteMode.MOR))
    for i in range(4):
        engine.load_append("t", [(i, "x")])
    engine.merge("t", [(0, "y")], [])
    before = engine.counters.copy()
    engine.read_metadata("t")
    delta = engine.counters - before
    assert delta.files_opened == 2 + iceberg_manifest_count(engine.root / "t")


def test_hudi_metadata_reads(engine):
    engine.create_table(small_desc(Layout.HUDI_STYLE, WriteMode.COW))
    for i in range(7):
        engine.load_append("t", [(i, "x")])
    before = engine.counters.copy()
    engine.read_metadata("t")
    delta = engine.counters - before
    assert (delta.list_calls, delta.files_opened) == (1, 1)


def test_scan_counters_count_data_files(engine, layout_mode):
    layout, mode = layout_mode
    _seed(engine, layout, mode, n=30, target=10)
    engine.merge("t", [(1, "a")], [])
    snap = engine.read_metadata("t")
    data_opens = len(snap.live_files) + snap.delta_count
    before = engine.counters.copy()
    res = engine.scan_snapshot(snap)
    assert (engine.counters - before).files_opened == data_opens
    assert res.files_scanned == len(snap.live_files)
    assert res.deltas_scanned == snap.delta_count


# -- worked examples and structural invariants ----------------------------------------------


def test_packing_arithmetic(engine):
    engine.create_table(small_desc(Layout.DELTA_STYLE, WriteMode.COW, target=40))
    snap = engine.load_append("t", [(i, "x") for i in range(1, 101)])
    assert sorted((f.row_count for f in snap.live_files.values()), reverse=True) == [40, 40, 20]
    assert len(engine.scan("t").rows) == 100


def test_empty_append_advances_version(engine):
    engine.create_table(small_desc(Layout.HUDI_STYLE, WriteMode.COW))
    assert engine.load_append("t", []).version == 1
    assert engine.current_version("t") == 1


def test_stats_bound_file_contents(engine, layout_mode):
    layout, mode = layout_mode
    _seed(engine, layout, mode, n=45, target=10)
    snap = engine.read_metadata("t")
    for f in snap.live_files.values():
        rows = engine._read_group(snap.descriptor, f, ())
        keys = [r[0] for r in rows]
        assert f.stats["key"] == (min(keys), max(keys))
        assert f.row_count == len(rows)


def test_cow_delete_rewrites_one_file(engine):
    engine.create_table(small_desc(Layout.DELTA_STYLE, WriteMode.COW, target=10))
    first = engine.load_append("t", [(i, "x") for i in range(1, 11)])
    (old,) = first.live_files
    snap = engine.merge("t", [], [5])
    assert old not in snap.live_files
    (new,) = snap.live_files.values()
    assert new.row_count == 9


def test_mor_delete_adds_delta(engine):
    engine.create_table(small_desc(Layout.DELTA_STYLE, WriteMode.MOR, target=10))
    first = engine.load_append("t", [(i, "x") for i in range(1, 11)])
    snap = engine.merge("t", [], [5])
    assert set(snap.live_files) == set(first.live_files)
    (deltas,) = snap.pending_deltas.values()
    assert len(deltas) == 1 and deltas[0].deleted_count == 1


def test_optimize_four_quarter_files(engine):
    engine.create_table(small_desc(Layout.ICEBERG_STYLE, WriteMode.COW, target=100))
    for b in range(4):
        engine.load_append("t", [(b * 25 + i, "x") for i in range(25)])
    snap = engine.optimize("t")
    assert [f.row_count for f in snap.live_files.values()] == [100]


def test_vacuum_retain_zero_removes_pre_optimize_files(engine):
    _seed(engine, Layout.DELTA_STYLE, WriteMode.MOR, n=30, target=10)
    engine.merge("t", [(1, "u")], [2])
    old = engine.read_metadata("t").referenced_file_ids()
    opt = engine.optimize("t")
    engine.vacuum("t", 0)
    on_disk = data_files_on_disk(engine.root / "t")
    assert not (old - set(opt.live_files)) & on_disk
    assert set(opt.live_files) <= on_disk


@pytest.mark.parametrize("layout", list(Layout), ids=[x.name for x in Layout])
@settings(max_examples=10, deadline=None)
@given(ops=ops_strategy)
def test_log_replay_matches_commit_snapshots(layout, ops):
    with tempfile.TemporaryDirectory() as d:
        eng = Engine(Path(d))
        _seed(eng, layout, WriteMode.MOR)
        cached = {1: eng.read_metadata("t").content_key()}
        for ups, dels in ops:
            s = eng.merge("t", ups, dels)
            cached[s.version] = s.content_key()
        s = eng.optimize("t")
        cached[s.version] = s.content_key()
        for v, key in cached.items():
            assert eng.read_metadata("t", v).content_key() == key
        hist = eng.history("t")
        assert [h.version for h in hist] == list(range(len(hist)))
        assert all(h.content_key() == cached[h.version] for h in hist if h.version in cached)


@settings(max_examples=15, deadline=None)
@given(ops=ops_strategy, mode=st.sampled_from(list(WriteMode)))
def test_layouts_return_identical_rows(ops, mode):
    results = []
    with tempfile.TemporaryDirectory() as d:
        for layout in Layout:
            eng = Engine(Path(d) / layout.name)
            _seed(eng, layout, mode)
            for ups, dels in ops:
                eng.merge("t", ups, dels)
            results.append(_rows(eng.scan("t")))
    assert results[0] == results[1] == results[2]


@pytest.mark.parametrize("layout,mode", LAYOUT_MODES, ids=LAYOUT_MODE_IDS)
@settings(max_examples=10, deadline=None)
@given(ops=ops_strategy)
def test_optimize_never_increases_file_count(layout, mode, ops):
    with tempfile.TemporaryDirectory() as d:
        eng = Engine(Path(d))
        _seed(eng, layout, mode)
        for ups, dels in ops:
            eng.merge("t", ups, dels)
        before = eng.read_metadata("t")
        after = eng.optimize("t")
        assert len(after.live_files) <= len(before.live_files)
        assert after.delta_count == 0


@pytest.mark.parametrize("layout,mode", LAYOUT_MODES, ids=LAYOUT_MODE_IDS)
def test_full_scan_opens_do_not_decrease_without_optimize(tmp_path, layout, mode):
    eng = Engine(tmp_path)
    _seed(eng, layout, mode, n=50, target=10)
    opens = []
    for i in range(8):
        eng.merge("t", [(i * 6, "u"), (500 + i, "n")], [i * 6 + 3])
        snap = eng.read_metadata("t")
        opens.append(eng.scan_snapshot(snap).counters.files_opened)
    assert opens == sorted(opens)


def test_cow_scan_never_opens_deltas(engine):
    _seed(engine, Layout.ICEBERG_STYLE, WriteMode.COW)
    for i in range(3):
        engine.merge("t", [(i, "u")], [])
    snap = engine.read_metadata("t")
    assert engine.scan_snapshot(snap).deltas_scanned == 0
    assert snap.delta_count == 0
    assert not list((engine.root / "t" / "data").glob("*.delta"))
