"""Table metadata records and the pure fold that turns a commit log into snapshots."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import Enum
from typing import Any, Iterable, Sequence

from ..errors import SchemaMismatch


class ColumnType(str, Enum):
    INT64 = "INT64"
    DECIMAL = "DECIMAL"
    STRING = "STRING"
    DATE = "DATE"


class Layout(str, Enum):
    DELTA_STYLE = "DELTA_STYLE"
    ICEBERG_STYLE = "ICEBERG_STYLE"
    HUDI_STYLE = "HUDI_STYLE"


class WriteMode(str, Enum):
    COW = "COW"
    MOR = "MOR"


class CommitKind(str, Enum):
    CREATE = "CREATE"
    APPEND = "APPEND"
    MERGE = "MERGE"
    OPTIMIZE = "OPTIMIZE"
    VACUUM = "VACUUM"


Row = tuple


def decode_value(ctype: ColumnType, raw: Any) -> Any:
    if ctype is ColumnType.INT64:
        return int(raw)
    if ctype is ColumnType.DECIMAL:
        return Decimal(str(raw))
    if ctype is ColumnType.DATE:
        if isinstance(raw, dt.date):
            return raw
        return dt.date.fromisoformat(str(raw))
    return str(raw)


def encode_value(ctype: ColumnType, value: Any) -> Any:
    """JSON/CSV-safe encoding; ints stay ints, everything else becomes text."""
    if ctype is ColumnType.INT64:
        return int(value)
    if ctype is ColumnType.DATE:
        return value.isoformat()
    return str(value)


@dataclass(frozen=True)
class TableDescriptor:
    name: str
    columns: tuple[tuple[str, ColumnType], ...]
    layout: Layout
    write_mode: WriteMode
    key_column: str
    target_file_rows: int
    checkpoint_interval: int = 10

    def __post_init__(self) -> None:
        names = [c for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise SchemaMismatch(f"duplicate column in {self.name}")
        if self.key_column not in names:
            raise SchemaMismatch(f"key column {self.key_column!r} not in schema of {self.name}")
        if self.target_file_rows < 1:
            raise SchemaMismatch("target_file_rows must be >= 1")
        if self.checkpoint_interval < 1:
            raise SchemaMismatch("checkpoint_interval must be >= 1")

    @property
    def column_names(self) -> list[str]:
        return [c for c, _ in self.columns]

    @property
    def key_index(self) -> int:
        return self.column_names.index(self.key_column)

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise SchemaMismatch(f"unknown column {name!r} in {self.name}") from None

    def column_type(self, name: str) -> ColumnType:
        return self.columns[self.column_index(name)][1]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "columns": [[c, t.value] for c, t in self.columns],
            "layout": self.layout.value,
            "write_mode": self.write_mode.value,
            "key_column": self.key_column,
            "target_file_rows": self.target_file_rows,
            "checkpoint_interval": self.checkpoint_interval,
        }

    @classmethod
    def from_json(cls, d: dict) -> TableDescriptor:
        return cls(
            name=d["name"],
            columns=tuple((c, ColumnType(t)) for c, t in d["columns"]),
            layout=Layout(d["layout"]),
            write_mode=WriteMode(d["write_mode"]),
            key_column=d["key_column"],
            target_file_rows=int(d["target_file_rows"]),
            checkpoint_interval=int(d.get("checkpoint_interval", 10)),
        )

    def coerce_row(self, values: Sequence[Any]) -> Row:
        if len(values) != len(self.columns):
            raise SchemaMismatch(f"{self.name}: expected {len(self.columns)} values, got {len(values)}")
        try:
            return tuple(decode_value(t, v) for (_, t), v in zip(self.columns, values))
        except (ValueError, ArithmeticError) as exc:
            raise SchemaMismatch(f"{self.name}: bad value in row {values!r}: {exc}") from None

    def row_stats(self, rows: Sequence[Row]) -> dict[str, tuple[Any, Any]]:
        if not rows:
            return {}
        stats = {}
        for i, (name, _) in enumerate(self.columns):
            col = [r[i] for r in rows]
            stats[name] = (min(col), max(col))
        return stats

    def encode_stats(self, stats: dict[str, tuple[Any, Any]]) -> dict:
        return {c: [encode_value(self.column_type(c), lo), encode_value(self.column_type(c), hi)] for c, (lo, hi) in stats.items()}

    def decode_stats(self, raw: dict) -> dict[str, tuple[Any, Any]]:
        return {c: (decode_value(self.column_type(c), lo), decode_value(self.column_type(c), hi)) for c, (lo, hi) in raw.items()}


@dataclass(frozen=True)
class DataFile:
    file_id: str
    row_count: int
    byte_size: int
    stats: dict = field(compare=True, hash=False)
    created_by_version: int


@dataclass(frozen=True)
class DeltaFile:
    """Metadata for a merge-on-read delta; its keys and rows live in the file itself."""

    file_id: str
    base_file_id: str
    byte_size: int
    deleted_count: int
    upsert_count: int
    stats: dict = field(compare=True, hash=False)
    created_by_version: int


# commit actions

@dataclass(frozen=True)
class AddFile:
    file: DataFile


@dataclass(frozen=True)
class RemoveFile:
    file_id: str


@dataclass(frozen=True)
class AddDelta:
    delta: DeltaFile


@dataclass(frozen=True)
class SetSchema:
    descriptor: TableDescriptor


@dataclass(frozen=True)
class Expire:
    """Versions below ``expired_below`` are no longer queryable."""

    expired_below: int


Action = AddFile | RemoveFile | AddDelta | SetSchema | Expire


@dataclass(frozen=True)
class CommitEntry:
    version: int
    parent_version: int
    kind: CommitKind
    actions: tuple


@dataclass
class Snapshot:
    version: int
    descriptor: TableDescriptor
    live_files: dict[str, DataFile]
    pending_deltas: dict[str, tuple[DeltaFile, ...]]
    expired_below: int = 0
    # per-layout bookkeeping carried to the next commit; not part of table content
    layout_state: Any = field(default=None, compare=False, repr=False)

    @property
    def delta_count(self) -> int:
        return sum(len(v) for v in self.pending_deltas.values())

    def content_key(self) -> tuple:
        files = tuple(sorted(self.live_files))
        deltas = tuple(sorted((b, tuple(d.file_id for d in ds)) for b, ds in self.pending_deltas.items()))
        return (self.version, files, deltas, self.expired_below)

    def referenced_file_ids(self) -> set[str]:
        ids = set(self.live_files)
        for ds in self.pending_deltas.values():
            ids.update(d.file_id for d in ds)
        return ids


def apply_commit(parent: Snapshot | None, entry: CommitEntry) -> Snapshot:
    """Pure fold step: the snapshot produced by applying ``entry`` to ``parent``."""
    if parent is None:
        if entry.version != 0:
            raise ValueError(f"log must start at version 0, got {entry.version}")
        schema = [a for a in entry.actions if isinstance(a, SetSchema)]
        if not schema:
            raise ValueError("version 0 must carry the table schema")
        snap = Snapshot(0, schema[0].descriptor, {}, {})
    else:
        if entry.parent_version != parent.version or entry.version != parent.version + 1:
            raise ValueError(f"commit {entry.version} does not follow {parent.version}")
        snap = Snapshot(entry.version, parent.descriptor, dict(parent.live_files), dict(parent.pending_deltas), parent.expired_below)
    for action in entry.actions:
        if isinstance(action, AddFile):
            snap.live_files[action.file.file_id] = action.file
        elif isinstance(action, RemoveFile):
            if action.file_id not in snap.live_files:
                raise ValueError(f"commit {entry.version} removes non-live file {action.file_id}")
            del snap.live_files[action.file_id]
            snap.pending_deltas.pop(action.file_id, None)
        elif isinstance(action, AddDelta):
            base = action.delta.base_file_id
            if base not in snap.live_files:
                raise ValueError(f"delta {action.delta.file_id} references non-live base {base}")
            snap.pending_deltas[base] = snap.pending_deltas.get(base, ()) + (action.delta,)
        elif isinstance(action, SetSchema):
            snap.descriptor = action.descriptor
        elif isinstance(action, Expire):
            snap.expired_below = max(snap.expired_below, action.expired_below)
    return snap


def rebase_entry(entry: CommitEntry, parent_version: int) -> CommitEntry:
    version = parent_version + 1
    actions = []
    for a in entry.actions:
        if isinstance(a, AddFile):
            a = AddFile(replace(a.file, created_by_version=version))
        elif isinstance(a, AddDelta):
            a = AddDelta(replace(a.delta, created_by_version=version))
        actions.append(a)
    return CommitEntry(version, parent_version, entry.kind, tuple(actions))


# JSON encodings (metadata files are line-oriented JSON)

def datafile_to_json(f: DataFile, desc: TableDescriptor) -> dict:
    return {"file_id": f.file_id, "rows": f.row_count, "bytes": f.byte_size,
            "stats": desc.encode_stats(f.stats), "version": f.created_by_version}


def datafile_from_json(d: dict, desc: TableDescriptor) -> DataFile:
    return DataFile(d["file_id"], d["rows"], d["bytes"], desc.decode_stats(d["stats"]), d["version"])


def delta_to_json(f: DeltaFile, desc: TableDescriptor) -> dict:
    return {"file_id": f.file_id, "base": f.base_file_id, "bytes": f.byte_size, "deleted": f.deleted_count,
            "upserts": f.upsert_count, "stats": desc.encode_stats(f.stats), "version": f.created_by_version}


def delta_from_json(d: dict, desc: TableDescriptor) -> DeltaFile:
    return DeltaFile(d["file_id"], d["base"], d["bytes"], d["deleted"], d["upserts"],
                     desc.decode_stats(d["stats"]), d["version"])


def action_to_json(a: Action, desc: TableDescriptor) -> dict:
    if isinstance(a, AddFile):
        return {"add_file": datafile_to_json(a.file, desc)}
    if isinstance(a, RemoveFile):
        return {"remove_file": a.file_id}
    if isinstance(a, AddDelta):
        return {"add_delta": delta_to_json(a.delta, desc)}
    if isinstance(a, SetSchema):
        return {"schema": a.descriptor.to_json()}
    if isinstance(a, Expire):
        return {"expire": a.expired_below}
    raise TypeError(a)


def action_from_json(d: dict, desc: TableDescriptor | None) -> Action:
    (kind, body), = d.items()
    if kind == "schema":
        return SetSchema(TableDescriptor.from_json(body))
    if kind == "remove_file":
        return RemoveFile(body)
    if kind == "expire":
        return Expire(int(body))
    if desc is None:
        raise ValueError("file action before schema")
    if kind == "add_file":
        return AddFile(datafile_from_json(body, desc))
    if kind == "add_delta":
        return AddDelta(delta_from_json(body, desc))
    raise ValueError(f"unknown action {kind!r}")


def dumps_lines(objs: Iterable[dict]) -> bytes:
    return "".join(json.dumps(o, separators=(",", ":"), sort_keys=True) + "\n" for o in objs).encode()


def loads_lines(data: bytes) -> list[dict]:
    return [json.loads(line) for line in data.decode().splitlines() if line.strip()]


def encode_commit(entry: CommitEntry, desc: TableDescriptor | None) -> bytes:
    if desc is None:
        desc = next(a.descriptor for a in entry.actions if isinstance(a, SetSchema))
    header = {"commit": {"version": entry.version, "parent": entry.parent_version, "kind": entry.kind.value}}
    return dumps_lines([header] + [action_to_json(a, desc) for a in entry.actions])


def decode_commit(data: bytes, desc: TableDescriptor | None) -> CommitEntry:
    lines = loads_lines(data)
    head = lines[0]["commit"]
    actions = []
    for line in lines[1:]:
        a = action_from_json(line, desc)
        if isinstance(a, SetSchema):
            desc = a.descriptor
        actions.append(a)
    return CommitEntry(head["version"], head["parent"], CommitKind(head["kind"]), tuple(actions))


def encode_state(snap: Snapshot) -> list[dict]:
    """Non-redundant description of a whole snapshot (checkpoints, index bases)."""
    desc = snap.descriptor
    out: list[dict] = [{"state": {"version": snap.version, "expired_below": snap.expired_below}},
                       {"schema": desc.to_json()}]
    for fid in sorted(snap.live_files):
        out.append({"add_file": datafile_to_json(snap.live_files[fid], desc)})
    for base in sorted(snap.pending_deltas):
        for d in snap.pending_deltas[base]:
            out.append({"add_delta": delta_to_json(d, desc)})
    return out


def decode_state(lines: list[dict]) -> Snapshot:
    head = lines[0]["state"]
    desc = TableDescriptor.from_json(lines[1]["schema"])
    snap = Snapshot(head["version"], desc, {}, {}, head["expired_below"])
    for line in lines[2:]:
        a = action_from_json(line, desc)
        if isinstance(a, AddFile):
            snap.live_files[a.file.file_id] = a.file
        elif isinstance(a, AddDelta):
            b = a.delta.base_file_id
            snap.pending_deltas[b] = snap.pending_deltas.get(b, ()) + (a.delta,)
    return snap


# physical data/delta file format: one JSON header line, then CSV rows

def encode_rows(desc: TableDescriptor, rows: Sequence[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    types = [t for _, t in desc.columns]
    for r in rows:
        w.writerow([encode_value(t, v) for t, v in zip(types, r)])
    return buf.getvalue()


def decode_rows(desc: TableDescriptor, text: str) -> list[Row]:
    types = [t for _, t in desc.columns]
    return [tuple(decode_value(t, v) for t, v in zip(types, rec)) for rec in csv.reader(io.StringIO(text))]


def encode_data_file(desc: TableDescriptor, file_id: str, rows: Sequence[Row]) -> bytes:
    header = {"data": file_id, "rows": len(rows), "stats": desc.encode_stats(desc.row_stats(rows))}
    return (json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n" + encode_rows(desc, rows)).encode()


def decode_data_file(desc: TableDescriptor, data: bytes) -> list[Row]:
    text = data.decode()
    _, _, body = text.partition("\n")
    return decode_rows(desc, body)


def encode_delta_file(desc: TableDescriptor, file_id: str, base: str, deleted: Iterable[Any], upserts: Sequence[Row]) -> bytes:
    kt = desc.column_type(desc.key_column)
    header = {"delta": file_id, "base": base, "deleted_keys": sorted(encode_value(kt, k) for k in deleted)}
    return (json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n" + encode_rows(desc, upserts)).encode()


def decode_delta_file(desc: TableDescriptor, data: bytes) -> tuple[set, list[Row]]:
    text = data.decode()
    head, _, body = text.partition("\n")
    kt = desc.column_type(desc.key_column)
    deleted = {decode_value(kt, k) for k in json.loads(head)["deleted_keys"]}
    return deleted, decode_rows(desc, body)
