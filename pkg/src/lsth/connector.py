"""Connections to systems under test.

Two kinds ship: ``MINI_LST`` runs statements in-process against the bundled
engine, and ``DRY_RUN`` only records them to per-session script files.
"""

from __future__ import annotations

import csv
import os
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Any

from .engine import Engine, StorageCounters
from .engine.sql import CopyInto, CreateTable, DeleteKeys, DropTable, MergeInto, Optimize, Vacuum, execute, parse
from .errors import ConfigError, LsthError, TargetUnreachable, UnknownTable


class ConnectionKind(str, Enum):
    MINI_LST = "MINI_LST"
    DRY_RUN = "DRY_RUN"


@dataclass(frozen=True)
class ConnectionSpec:
    kind: ConnectionKind
    storage_root: Path | None = None
    options: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.storage_root is None:
            raise ConfigError(f"{self.kind.value} connection requires storage_root")

    @classmethod
    def from_dict(cls, d: dict) -> ConnectionSpec:
        unknown = set(d) - {"kind", "storage_root", "options"}
        if unknown:
            raise ConfigError(f"unknown connection keys: {sorted(unknown)}")
        try:
            kind = ConnectionKind(str(d.get("kind", "MINI_LST")).upper())
        except ValueError:
            raise ConfigError(f"unknown connection kind {d.get('kind')!r}") from None
        root = d.get("storage_root")
        return cls(kind, Path(root) if root is not None else None,
                   {str(k): str(v) for k, v in (d.get("options") or {}).items()})

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "storage_root": str(self.storage_root), "options": dict(self.options)}


@dataclass
class StatementResult:
    row_count: int
    scalar: Decimal | None
    counters: StorageCounters
    rows: list[tuple] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)


class CatalogView:
    """Introspection used by custom-task generators.

    Connectors that cannot answer a question raise NotImplementedError,
    which disables the generators relying on it.
    """

    def list_tables(self) -> list[str]:
        raise NotImplementedError("catalog listing unsupported")

    def row_count(self, table: str) -> int:
        raise NotImplementedError("row counts unsupported")

    def current_version(self, table: str) -> int:
        raise NotImplementedError("table versions unsupported")

    def source_rows(self, path: str) -> int:
        """Number of data rows in a CSV source file (header excluded)."""
        with open(path, newline="", encoding="utf-8") as fh:
            return max(0, sum(1 for row in csv.reader(fh) if row) - 1)


def _as_scalar(v: Any) -> Decimal | None:
    if isinstance(v, bool) or v is None:
        return None
    if isinstance(v, (int, Decimal)):
        return Decimal(v)
    return None


class Connection:
    """A single-session handle; not safe for concurrent use."""

    kind: ConnectionKind

    def __init__(self, spec: ConnectionSpec):
        self.spec = spec
        self.closed = False
        self.label = "session"

    def _check_open(self) -> None:
        if self.closed:
            raise TargetUnreachable("connection is closed")

    def execute(self, sql: str) -> StatementResult:
        raise NotImplementedError

    def current_version(self, table: str) -> int | None:
        raise NotImplementedError

    def catalog(self) -> CatalogView:
        return CatalogView()

    def close(self) -> None:
        self.closed = True


class MiniLstConnection(Connection):
    kind = ConnectionKind.MINI_LST

    def __init__(self, spec: ConnectionSpec):
        super().__init__(spec)
        budget = int(spec.options.get("retry_budget", 3))
        self.engine = Engine(spec.storage_root, retry_budget=budget)
        base = spec.options.get("base_dir")
        self.base_dir = Path(base) if base else None

    def execute(self, sql: str) -> StatementResult:
        self._check_open()
        before = self.engine.counters.copy()
        out = execute(self.engine, sql, self.base_dir)
        delta = self.engine.counters - before
        scalar = _as_scalar(out.rows[0][0]) if out.scalar_aggregate and out.rows else None
        return StatementResult(out.row_count, scalar, delta, out.rows, out.columns)

    def current_version(self, table: str) -> int | None:
        self._check_open()
        try:
            return self.engine.current_version(table)
        except UnknownTable:
            return None

    def catalog(self) -> CatalogView:
        return _MiniLstCatalog(self.engine)


class _MiniLstCatalog(CatalogView):
    def __init__(self, engine: Engine):
        self.engine = engine

    def list_tables(self) -> list[str]:
        return self.engine.list_tables()

    def row_count(self, table: str) -> int:
        snap = self.engine.read_metadata(table)
        if snap.pending_deltas:
            return len(self.engine.scan_snapshot(snap).rows)
        return sum(f.row_count for f in snap.live_files.values())

    def current_version(self, table: str) -> int:
        return self.engine.current_version(table)


class _DryRunState:
    """Pseudo table versions shared by the dry-run connections of one pool."""

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.versions: dict[str, int] = {}

    def observe(self, sql: str) -> None:
        try:
            node = parse(sql)
        except LsthError:
            return
        with self.lock:
            if isinstance(node, CreateTable):
                self.versions[node.desc.name] = 0
            elif isinstance(node, DropTable):
                self.versions.pop(node.table, None)
            elif isinstance(node, (CopyInto, MergeInto, DeleteKeys, Optimize, Vacuum)):
                if node.table in self.versions:
                    self.versions[node.table] += 1


class DryRunConnection(Connection):
    """Accepts any statement and appends it to ``script_<label>.sql``."""

    kind = ConnectionKind.DRY_RUN

    def __init__(self, spec: ConnectionSpec, state: _DryRunState | None = None):
        super().__init__(spec)
        self.state = state if state is not None else _DryRunState()

    @property
    def script_path(self) -> Path:
        return Path(self.spec.storage_root) / f"script_{self.label}.sql"

    def execute(self, sql: str) -> StatementResult:
        self._check_open()
        with open(self.script_path, "a", encoding="utf-8") as fh:
            fh.write(sql.rstrip().rstrip(";") + ";\n")
        self.state.observe(sql)
        return StatementResult(0, None, StorageCounters())

    def current_version(self, table: str) -> int | None:
        with self.state.lock:
            return self.state.versions.get(table)


def _prepare_root(spec: ConnectionSpec) -> None:
    root = Path(spec.storage_root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TargetUnreachable(f"storage root {root} cannot be created: {exc}") from None
    if not os.access(root, os.W_OK | os.X_OK):
        raise TargetUnreachable(f"storage root {root} is not writable")


def open_connection(spec: ConnectionSpec, _state: _DryRunState | None = None) -> Connection:
    _prepare_root(spec)
    if spec.kind is ConnectionKind.MINI_LST:
        return MiniLstConnection(spec)
    return DryRunConnection(spec, _state)


class ConnectionPool:
    """Fixed-size pool for one target; records the peak number of busy connections."""

    def __init__(self, spec: ConnectionSpec, size: int):
        if size < 1:
            raise ConfigError("pool size must be >= 1")
        self.spec = spec
        self.size = size
        state = _DryRunState() if spec.kind is ConnectionKind.DRY_RUN else None
        self._idle = [open_connection(spec, state) for _ in range(size)]
        self._all = list(self._idle)
        self._cond = threading.Condition()
        self.busy = 0
        self.peak_busy = 0

    def acquire(self, label: str = "session") -> Connection:
        with self._cond:
            while not self._idle:
                self._cond.wait()
            conn = self._idle.pop()
            self.busy += 1
            self.peak_busy = max(self.peak_busy, self.busy)
        conn.label = label
        return conn

    def release(self, conn: Connection) -> None:
        with self._cond:
            self.busy -= 1
            self._idle.append(conn)
            self._cond.notify()

    def probe(self) -> Connection:
        """Any connection of the pool, for between-phase metadata queries."""
        return self._all[0]

    def close(self) -> None:
        for c in self._all:
            c.close()
