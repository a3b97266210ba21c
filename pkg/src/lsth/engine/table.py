"""The mini log-structured table engine.

One :class:`Engine` is one compute instance: it owns a counted view of a
storage root and keeps no table state between calls, so any number of
engines (threads or processes) can share a root.  Every read resolves a
fresh snapshot from metadata; every write goes through an optimistic commit.
"""

from __future__ import annotations

import bisect
import itertools
import re
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from ..errors import ConflictError, ExecError, SchemaMismatch, TableExists, UnknownTable, VersionNotFound
from .counters import SharedCounters, StorageCounters
from .layouts import LAYOUTS, MetadataLayout, detect_layout
from .model import (
    AddDelta,
    AddFile,
    CommitEntry,
    CommitKind,
    DataFile,
    DeltaFile,
    Expire,
    Layout,
    RemoveFile,
    Row,
    SetSchema,
    Snapshot,
    TableDescriptor,
    WriteMode,
    apply_commit,
    decode_value,
    decode_data_file,
    decode_delta_file,
    encode_data_file,
    encode_delta_file,
    rebase_entry,
)
from .storage import Storage

_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

DEFAULT_RETRY_BUDGET = 3


@dataclass(frozen=True)
class Condition:
    """``column op value``; op is one of = != < <= > >= between in.

    For ``between`` ``value2`` is the inclusive upper bound; for ``in``
    ``value`` is a frozenset.
    """

    column: str
    op: str
    value: Any
    value2: Any = None

    def test(self, v: Any) -> bool:
        op = self.op
        if op == "=":
            return v == self.value
        if op == "!=":
            return v != self.value
        if op == "<":
            return v < self.value
        if op == "<=":
            return v <= self.value
        if op == ">":
            return v > self.value
        if op == ">=":
            return v >= self.value
        if op == "between":
            return self.value <= v <= self.value2
        if op == "in":
            return v in self.value
        raise ExecError(f"unsupported operator {op!r}")

    def may_match(self, lo: Any, hi: Any) -> bool:
        """False only when no value in [lo, hi] can satisfy the condition."""
        op = self.op
        if op == "=":
            return lo <= self.value <= hi
        if op == "!=":
            return not (lo == hi == self.value)
        if op == "<":
            return lo < self.value
        if op == "<=":
            return lo <= self.value
        if op == ">":
            return hi > self.value
        if op == ">=":
            return hi >= self.value
        if op == "between":
            return not (hi < self.value or lo > self.value2)
        if op == "in":
            return any(lo <= x <= hi for x in self.value)
        return True


@dataclass
class ScanResult:
    rows: list[Row]
    snapshot: Snapshot
    counters: StorageCounters
    files_scanned: int
    deltas_scanned: int


def _stats_may_match(stats: dict, predicate: Sequence[Condition]) -> bool:
    if not stats:
        return False
    for cond in predicate:
        lo_hi = stats.get(cond.column)
        if lo_hi is not None and not cond.may_match(*lo_hi):
            return False
    return True


def _chunks(rows: Sequence[Row], size: int) -> list[list[Row]]:
    return [list(rows[i:i + size]) for i in range(0, len(rows), size)]


class Engine:
    def __init__(
        self,
        root: str | Path,
        retry_budget: int = DEFAULT_RETRY_BUDGET,
        shared: SharedCounters | None = None,
        before_publish: Callable[[str, int], None] | None = None,
    ):
        self.root = Path(root)
        self.store = Storage(self.root, shared)
        self.retry_budget = retry_budget
        # test hook: runs right before each publish attempt (table, version)
        self.before_publish = before_publish

    @property
    def counters(self) -> StorageCounters:
        return self.store.counters

    # -- catalog -------------------------------------------------------------

    def _table_dir(self, name: str) -> Path:
        if not _NAME.match(name):
            raise ExecError(f"invalid table name {name!r}")
        return self.root / name

    def _open(self, name: str) -> tuple[MetadataLayout, list[str]]:
        tdir = self._table_dir(name)
        names = self.store.list(tdir / "meta")
        kind = detect_layout(names)
        if kind is None:
            raise UnknownTable(f"table {name!r} does not exist")
        return LAYOUTS[kind](self.store, tdir), names

    def list_tables(self) -> list[str]:
        return [n for n in self.store.list(self.root) if (self.root / n / "meta").is_dir()]

    def create_table(self, desc: TableDescriptor, if_not_exists: bool = False) -> Snapshot:
        tdir = self._table_dir(desc.name)
        layout = LAYOUTS[desc.layout](self.store, tdir)
        entry = CommitEntry(0, -1, CommitKind.CREATE, (SetSchema(desc),))
        snap = apply_commit(None, entry)
        if detect_layout(self.store.list(tdir / "meta")) is not None or not layout.publish(None, entry, snap):
            if if_not_exists:
                return self.read_metadata(desc.name)
            raise TableExists(f"table {desc.name!r} already exists")
        layout.after_publish(entry, snap)
        return snap

    def drop_table(self, name: str, if_exists: bool = False) -> None:
        tdir = self._table_dir(name)
        if not (tdir / "meta").is_dir():
            if if_exists:
                return
            raise UnknownTable(f"table {name!r} does not exist")
        self.store.remove_tree(tdir)

    def read_metadata(self, name: str, asof_version: int | None = None) -> Snapshot:
        layout, names = self._open(name)
        return layout.read(names, asof_version)

    def current_version(self, name: str) -> int:
        layout, names = self._open(name)
        return layout.latest_version(names)

    def history(self, name: str) -> list[Snapshot]:
        layout, names = self._open(name)
        return layout.history(names)

    # -- files ---------------------------------------------------------------

    def _data_path(self, name: str, file_id: str, delta: bool = False) -> Path:
        return self.root / name / "data" / (f"{file_id}.delta" if delta else f"{file_id}.data")

    def _new_id(self, version: int, seq: int) -> str:
        return f"{version:010d}-{seq:05d}-{uuid.uuid4().hex[:8]}"

    def _write_data(self, desc: TableDescriptor, version: int, seq: int, rows: Sequence[Row]) -> DataFile:
        fid = self._new_id(version, seq)
        body = encode_data_file(desc, fid, rows)
        self.store.write(self._data_path(desc.name, fid), body)
        return DataFile(fid, len(rows), len(body), desc.row_stats(rows), version)

    def _write_delta(self, desc: TableDescriptor, version: int, seq: int, base: str,
                     deleted: set, upserts: list[Row]) -> DeltaFile:
        fid = self._new_id(version, seq)
        body = encode_delta_file(desc, fid, base, deleted, upserts)
        self.store.write(self._data_path(desc.name, fid, delta=True), body)
        return DeltaFile(fid, base, len(body), len(deleted), len(upserts), desc.row_stats(upserts), version)

    def _read_group(self, desc: TableDescriptor, f: DataFile, deltas: Iterable[DeltaFile]) -> list[Row]:
        """Rows of a base file with its pending deltas merged in, in delta order."""
        try:
            rows = decode_data_file(desc, self.store.read(self._data_path(desc.name, f.file_id)))
            k = desc.key_index
            for d in deltas:
                deleted, ups = decode_delta_file(desc, self.store.read(self._data_path(desc.name, d.file_id, delta=True)))
                drop = deleted | {r[k] for r in ups}
                rows = [r for r in rows if r[k] not in drop] + ups
        except FileNotFoundError as exc:
            raise VersionNotFound(f"data file missing (vacuumed?): {Path(exc.filename).name}") from None
        return rows

    # -- commit --------------------------------------------------------------

    def commit(self, name: str, parent_version: int, actions: Sequence, kind: CommitKind,
               touched: Iterable[str] = ()) -> Snapshot:
        """Publish ``actions`` as version ``parent_version + 1`` (optimistically).

        On collision the latest snapshot is re-read; the commit rebases onto it
        unless one of ``touched`` (base files this commit rewrites or attaches
        deltas to) changed in between, in which case ConflictError is raised.
        """
        layout, names = self._open(name)
        parent = layout.read(names, parent_version)
        return self._commit(layout, parent, kind, list(actions), set(touched))

    def _commit(self, layout: MetadataLayout, parent: Snapshot, kind: CommitKind,
                actions: list, touched: set[str]) -> Snapshot:
        entry = CommitEntry(parent.version + 1, parent.version, kind, tuple(actions))
        for _attempt in range(self.retry_budget + 1):
            try:
                new = apply_commit(parent, entry)
            except ValueError as exc:
                raise ConflictError(str(exc)) from None
            if self.before_publish is not None:
                self.before_publish(parent.descriptor.name, entry.version)
            if layout.publish(parent, entry, new):
                layout.after_publish(entry, new)
                return new
            latest = layout.read(layout.list())
            for fid in touched:
                if fid not in latest.live_files or latest.pending_deltas.get(fid, ()) != parent.pending_deltas.get(fid, ()):
                    raise ConflictError(
                        f"{kind.value} on {parent.descriptor.name} conflicts with a concurrent commit on file {fid}")
            entry = rebase_entry(entry, latest.version)
            parent = latest
        raise ConflictError(f"{kind.value} on {parent.descriptor.name}: retry budget of {self.retry_budget} exhausted")

    # -- operations ------------------------------------------------------------

    def load_append(self, name: str, rows: Iterable[Sequence[Any]]) -> Snapshot:
        layout, names = self._open(name)
        snap = layout.read(names)
        desc = snap.descriptor
        coerced = [desc.coerce_row(r) for r in rows]
        version = snap.version + 1
        actions = [AddFile(self._write_data(desc, version, i, chunk))
                   for i, chunk in enumerate(_chunks(coerced, desc.target_file_rows))]
        return self._commit(layout, snap, CommitKind.APPEND, actions, set())

    def merge(self, name: str, upserts: Iterable[Sequence[Any]] = (), delete_keys: Iterable[Any] = ()) -> Snapshot:
        """Upsert rows by key and delete keys, in one MERGE commit.

        COW rewrites every base file holding an affected key; MOR attaches one
        delta per such file.  Upserts whose key is not present are inserted as
        new files; with the hudi-style layout they are first used to top up
        small files to ``target_file_rows``.  A key both upserted and deleted
        is deleted.
        """
        layout, names = self._open(name)
        snap = layout.read(names)
        desc = snap.descriptor
        k = desc.key_index
        key_type = desc.column_type(desc.key_column)
        deletes = {decode_value(key_type, x) for x in delete_keys}
        by_key = {}
        for r in upserts:
            row = desc.coerce_row(r)
            if row[k] not in deletes:
                by_key[row[k]] = row
        affected = sorted(set(by_key) | deletes)
        version = snap.version + 1
        seq = itertools.count()
        actions: list = []
        touched: set[str] = set()
        outputs: list[list[Row]] = []
        matched: set = set()

        def holds_affected(f: DataFile) -> bool:
            lo, hi = f.stats[desc.key_column]
            i = bisect.bisect_left(affected, lo)
            return i < len(affected) and affected[i] <= hi

        for fid in sorted(snap.live_files):
            f = snap.live_files[fid]
            if not affected or not f.stats or not holds_affected(f):
                continue
            rows = self._read_group(desc, f, snap.pending_deltas.get(fid, ()))
            here = {r[k] for r in rows}.intersection(affected)
            if not here:
                continue
            matched |= here
            touched.add(fid)
            ups_here = [by_key[x] for x in sorted(here) if x in by_key]
            if desc.write_mode is WriteMode.COW:
                actions.append(RemoveFile(fid))
                kept = [r for r in rows if r[k] not in here] + ups_here
                if kept:
                    outputs.append(kept)
            else:
                delta = self._write_delta(desc, version, next(seq), fid, here & deletes, ups_here)
                actions.append(AddDelta(delta))

        inserts = [by_key[x] for x in sorted(by_key) if x not in matched]
        target = desc.target_file_rows
        if desc.layout is Layout.HUDI_STYLE and inserts:
            # auto file sizing: top up small files before opening new ones
            for out in outputs:
                take = max(0, target - len(out))
                out.extend(inserts[:take])
                inserts = inserts[take:]
            for fid in sorted(snap.live_files):
                if not inserts:
                    break
                f = snap.live_files[fid]
                if fid in touched or f.row_count >= target:
                    continue
                rows = self._read_group(desc, f, snap.pending_deltas.get(fid, ()))
                take = target - len(rows)
                if take <= 0:
                    continue
                actions.append(RemoveFile(fid))
                touched.add(fid)
                outputs.append(rows + inserts[:take])
                inserts = inserts[take:]
        for out in outputs:
            for chunk in _chunks(out, target):
                actions.append(AddFile(self._write_data(desc, version, next(seq), chunk)))
        for chunk in _chunks(inserts, target):
            actions.append(AddFile(self._write_data(desc, version, next(seq), chunk)))
        return self._commit(layout, snap, CommitKind.MERGE, actions, touched)

    def scan(self, name: str, predicate: Sequence[Condition] = (), asof_version: int | None = None) -> ScanResult:
        before = self.counters.copy()
        res = self.scan_snapshot(self.read_metadata(name, asof_version), predicate)
        res.counters = self.counters - before
        return res

    def scan_snapshot(self, snap: Snapshot, predicate: Sequence[Condition] = ()) -> ScanResult:
        """Read the rows of an already resolved snapshot, pruning by file stats."""
        before = self.counters.copy()
        desc = snap.descriptor
        idx = [(desc.column_index(c.column), c) for c in predicate]
        rows: list[Row] = []
        n_files = n_deltas = 0
        for fid in sorted(snap.live_files):
            f = snap.live_files[fid]
            deltas = snap.pending_deltas.get(fid, ())
            if predicate and not (_stats_may_match(f.stats, predicate)
                                  or any(_stats_may_match(d.stats, predicate) for d in deltas)):
                continue
            n_files += 1
            n_deltas += len(deltas)
            for r in self._read_group(desc, f, deltas):
                if all(c.test(r[i]) for i, c in idx):
                    rows.append(r)
        return ScanResult(rows, snap, self.counters - before, n_files, n_deltas)

    def optimize(self, name: str) -> Snapshot:
        """Merge pending deltas and bin-pack small files up to ``target_file_rows``.

        Candidates are files with pending deltas or fewer than target rows.
        Their rows are placed first-fit, in ascending file_id order, into
        bins of ``target_file_rows``; a file that does not fit whole spills
        into later bins.
        """
        layout, names = self._open(name)
        snap = layout.read(names)
        desc = snap.descriptor
        target = desc.target_file_rows
        candidates = [fid for fid in sorted(snap.live_files)
                      if snap.pending_deltas.get(fid) or snap.live_files[fid].row_count < target]
        if len(candidates) == 1 and not snap.pending_deltas.get(candidates[0]):
            candidates = []
        bins: list[list[Row]] = []
        for fid in candidates:
            rest = self._read_group(desc, snap.live_files[fid], snap.pending_deltas.get(fid, ()))
            for b in bins:
                if not rest:
                    break
                room = target - len(b)
                if room > 0:
                    b.extend(rest[:room])
                    rest = rest[room:]
            bins.extend(_chunks(rest, target))
        version = snap.version + 1
        actions: list = [RemoveFile(fid) for fid in candidates]
        actions += [AddFile(self._write_data(desc, version, i, b)) for i, b in enumerate(bins)]
        return self._commit(layout, snap, CommitKind.OPTIMIZE, actions, set(candidates))

    def vacuum(self, name: str, retain_versions: int) -> Snapshot:
        """Expire versions older than ``current - retain_versions`` and delete their files.

        Only files that some still-readable snapshot used to reference are
        deleted; files of in-flight writers are never touched.
        """
        if retain_versions < 0:
            raise ExecError("retain_versions must be >= 0")
        layout, names = self._open(name)
        hist = layout.history(names)
        latest = hist[-1]
        bound = max(latest.version - retain_versions, latest.expired_below, hist[0].version)
        known: set[str] = set()
        reachable: set[str] = set()
        for s in hist:
            ids = s.referenced_file_ids()
            known |= ids
            if s.version >= bound:
                reachable |= ids
        new = self._commit(layout, latest, CommitKind.VACUUM, [Expire(bound)], set())
        for fid in sorted(known - reachable):
            self.store.delete(self._data_path(name, fid))
            self.store.delete(self._data_path(name, fid, delta=True))
        layout.expire(names, bound, hist)
        return new
