from __future__ import annotations

import datetime as dt
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator

from .engine.counters import StorageCounters
from .errors import FormatError, IOFailure

SCHEMA_VERSION = 1
EVENTS_FILE = "events.jsonl"
COUNTERS_FILE = "counters.jsonl"


class Status(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    SKIPPED = "SKIPPED"


class Level(str, Enum):
    STATEMENT = "statement"
    PHASE = "phase"
    EXPERIMENT = "experiment"


def utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


@dataclass
class EventRecord:
    """One timed unit of work.

    ``start_ns`` is the monotonic-clock offset from the start of the
    experiment, so intervals of different sessions are directly comparable;
    ``wall_start`` is only for correlating with external logs.  Phase and
    experiment records use -1 for the indices below their level.
    """

    experiment_id: str
    phase_id: str
    phase_type: str
    session_idx: int
    task_name: str
    statement_idx: int
    status: Status
    wall_start: str
    duration_ns: int
    counters: StorageCounters = field(default_factory=StorageCounters)
    error_text: str | None = None
    level: Level = Level.STATEMENT
    task_idx: int = -1
    start_ns: int = 0
    sql: str | None = None

    def __post_init__(self) -> None:
        self.status = Status(self.status)
        self.level = Level(self.level)
        if self.duration_ns < 0:
            raise ValueError(f"negative duration_ns {self.duration_ns}")
        if not self.counters.is_nonnegative():
            raise ValueError("counters must be non-negative")

    @property
    def end_ns(self) -> int:
        return self.start_ns + self.duration_ns

    def to_json(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "experiment_id": self.experiment_id,
            "phase_id": self.phase_id,
            "phase_type": self.phase_type,
            "session_idx": self.session_idx,
            "task_name": self.task_name,
            "statement_idx": self.statement_idx,
            "status": self.status.value,
            "wall_start": self.wall_start,
            "duration_ns": self.duration_ns,
            "counters": self.counters.as_dict(),
            "error_text": self.error_text,
            "level": self.level.value,
            "task_idx": self.task_idx,
            "start_ns": self.start_ns,
            "sql": self.sql,
        }

    @classmethod
    def from_json(cls, d: dict) -> EventRecord:
        d = dict(d)
        if d.pop("v", None) != SCHEMA_VERSION:
            raise ValueError("unsupported or missing schema version")
        d["counters"] = StorageCounters.from_dict(d.get("counters") or {})
        return cls(**d)


@dataclass
class CounterSample:
    source: str
    wall_time: str
    counters: StorageCounters
    label: str = ""

    def __post_init__(self) -> None:
        if not self.counters.is_nonnegative():
            raise ValueError("counters must be non-negative")

    def to_json(self) -> dict:
        return {"v": SCHEMA_VERSION, "source": self.source, "wall_time": self.wall_time,
                "counters": self.counters.as_dict(), "label": self.label}

    @classmethod
    def from_json(cls, d: dict) -> CounterSample:
        d = dict(d)
        if d.pop("v", None) != SCHEMA_VERSION:
            raise ValueError("unsupported or missing schema version")
        d["counters"] = StorageCounters.from_dict(d["counters"])
        return cls(**d)


class TelemetrySink:
    """Thread-safe JSONL writer for one experiment output directory."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self._lock = threading.Lock()
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IOFailure(f"cannot create {self.out_dir}: {exc}") from exc
        self.events_path = self.out_dir / EVENTS_FILE
        self.counters_path = self.out_dir / COUNTERS_FILE

    def _write(self, path: Path, obj: dict) -> None:
        line = json.dumps(obj, sort_keys=True) + "\n"
        with self._lock:
            try:
                with open(path, "a", encoding="utf-8") as fh:
                    fh.write(line)
            except OSError as exc:
                raise IOFailure(f"append to {path}: {exc}") from exc

    def append(self, record: EventRecord) -> None:
        if not isinstance(record, EventRecord):
            raise TypeError("append expects an EventRecord")
        self._write(self.events_path, record.to_json())

    def append_sample(self, sample: CounterSample) -> None:
        self._write(self.counters_path, sample.to_json())


class MemorySink:
    """In-process sink with the same interface as TelemetrySink."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.events: list[EventRecord] = []
        self.samples: list[CounterSample] = []

    def append(self, record: EventRecord) -> None:
        if not isinstance(record, EventRecord):
            raise TypeError("append expects an EventRecord")
        with self._lock:
            self.events.append(record)

    def append_sample(self, sample: CounterSample) -> None:
        with self._lock:
            self.samples.append(sample)


@dataclass
class LoadedTelemetry:
    events: list[EventRecord]
    samples: list[CounterSample]
    diagnostics: list[str] = field(default_factory=list)

    def __iter__(self) -> Iterator:
        yield self.events
        yield self.samples


def _load_file(path: Path, strict: bool, out: LoadedTelemetry) -> None:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IOFailure(f"read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not a JSON object")
            if "source" in obj:
                out.samples.append(CounterSample.from_json(obj))
            else:
                out.events.append(EventRecord.from_json(obj))
        except (ValueError, TypeError, KeyError) as exc:
            msg = f"{path.name}:{lineno}: {exc}"
            if strict:
                raise FormatError(msg) from None
            out.diagnostics.append(msg)


def load(path: str | Path, strict: bool = True) -> LoadedTelemetry:
    """Read events and counter samples from a JSONL file or an output directory.

    In strict mode (default) the first malformed line raises FormatError;
    otherwise malformed lines are skipped and reported in ``diagnostics``.
    """
    p = Path(path)
    out = LoadedTelemetry([], [])
    if p.is_dir():
        files = [p / EVENTS_FILE, p / COUNTERS_FILE]
        if not any(f.exists() for f in files):
            raise IOFailure(f"no telemetry files in {p}")
        for f in files:
            if f.exists():
                _load_file(f, strict, out)
    else:
        if not p.exists():
            raise IOFailure(f"no such file: {p}")
        _load_file(p, strict, out)
    return out
