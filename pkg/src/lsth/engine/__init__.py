from .counters import COUNTER_FIELDS, SharedCounters, StorageCounters, shared_counters
from .model import ColumnType, CommitKind, Layout, Snapshot, TableDescriptor, WriteMode
from .table import Condition, Engine, ScanResult

__all__ = [
    "COUNTER_FIELDS", "ColumnType", "CommitKind", "Condition", "Engine", "Layout", "ScanResult",
    "SharedCounters", "Snapshot", "StorageCounters", "TableDescriptor", "WriteMode", "shared_counters",
]
