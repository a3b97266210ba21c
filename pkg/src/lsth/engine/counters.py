from __future__ import annotations

import threading
from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass
class StorageCounters:
    """File-operation and byte counters for one window of storage activity.

    Stands in for object-store API calls and transfer volume; all fields are
    additive so windows can be summed or differenced.
    """

    files_opened: int = 0
    files_written: int = 0
    list_calls: int = 0
    bytes_read: int = 0
    bytes_written: int = 0

    def __add__(self, other: StorageCounters) -> StorageCounters:
        return StorageCounters(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __sub__(self, other: StorageCounters) -> StorageCounters:
        return StorageCounters(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))

    def copy(self) -> StorageCounters:
        return StorageCounters(**asdict(self))

    def as_dict(self) -> dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> StorageCounters:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown counter fields: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in d.items()})

    def is_nonnegative(self) -> bool:
        return all(getattr(self, f.name) >= 0 for f in fields(self))


COUNTER_FIELDS = tuple(f.name for f in fields(StorageCounters))


class SharedCounters:
    """Cumulative counters for every engine instance working on one storage root."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._total = StorageCounters()

    def add(self, name: str, amount: int) -> None:
        with self._lock:
            setattr(self._total, name, getattr(self._total, name) + amount)

    def snapshot(self) -> StorageCounters:
        with self._lock:
            return self._total.copy()


_registry: dict[str, SharedCounters] = {}
_registry_lock = threading.Lock()


def shared_counters(root: str | Path) -> SharedCounters:
    """Process-wide cumulative counters for a storage root."""
    key = str(Path(root).resolve())
    with _registry_lock:
        if key not in _registry:
            _registry[key] = SharedCounters()
        return _registry[key]
