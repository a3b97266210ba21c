"""Built-in workload packages W0-W4.

Every DATA_MAINTENANCE task consumes its own refresh stream, numbered 1, 2,
... in workload order (see :func:`required_refreshes`).  SINGLE_USER tasks
get ``permutation_seed=0``; THROUGHPUT streams get seeds 0..s-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import count

from .errors import ConfigError
from .workload import PhaseSpec, PhaseType, SessionSpec, TaskRef, WorkloadSpec, validate

W1_DM_PHASES = 5


class PackageId(str, Enum):
    W0 = "W0"
    W1 = "W1"
    W2 = "W2"
    W3 = "W3"
    W3_MULTI = "W3_MULTI"
    W4 = "W4"


@dataclass(frozen=True)
class PackageConfig:
    streams: int = 2          # s: sessions per THROUGHPUT phase
    iterations: int = 3       # k: DM batches (W2/W3/W4)
    read_target: str = "default"
    write_target: str = "default"
    params: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.streams < 1:
            raise ConfigError("stream count must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iteration count must be >= 1")


class _Builder:
    def __init__(self, cfg: PackageConfig, read: str, write: str):
        self.cfg = cfg
        self.read = read
        self.write = write
        self.refresh = count(1)
        self.phases: list[PhaseSpec] = []

    def su(self, seed: int = 0) -> SessionSpec:
        return SessionSpec((TaskRef("single_user", permutation_seed=seed),), self.read)

    def dm(self, n: int = 1) -> SessionSpec:
        tasks = tuple(TaskRef("data_maintenance", {"refresh": str(next(self.refresh))}) for _ in range(n))
        return SessionSpec(tasks, self.write)

    def opt(self) -> SessionSpec:
        return SessionSpec((TaskRef("optimize"),), self.write)

    def add(self, pid: str, ptype: PhaseType, *sessions: SessionSpec) -> None:
        self.phases.append(PhaseSpec(pid, ptype, tuple(sessions)))

    def load(self) -> None:
        self.add("load", PhaseType.LOAD, SessionSpec((TaskRef("load"),), self.write))


def build_package(package_id: PackageId | str, cfg: PackageConfig = PackageConfig()) -> WorkloadSpec:
    pid = PackageId(package_id)
    multi = pid is PackageId.W3_MULTI
    b = _Builder(cfg, "reader" if multi else cfg.read_target, "writer" if multi else cfg.write_target)
    b.load()
    k = cfg.iterations
    if pid is PackageId.W0:
        b.add("su_1", PhaseType.SINGLE_USER, b.su())
        b.add("tp_1", PhaseType.THROUGHPUT, *(b.su(i) for i in range(cfg.streams)))
        b.add("dm_1", PhaseType.DATA_MAINTENANCE, b.dm())
        b.add("tp_2", PhaseType.THROUGHPUT, *(b.su(i) for i in range(cfg.streams)))
        b.add("dm_2", PhaseType.DATA_MAINTENANCE, b.dm())
    elif pid is PackageId.W1:
        for i in range(1, W1_DM_PHASES + 1):
            b.add(f"su_{i}", PhaseType.SINGLE_USER, b.su())
            b.add(f"dm_{i}", PhaseType.DATA_MAINTENANCE, b.dm())
        b.add(f"su_{W1_DM_PHASES + 1}", PhaseType.SINGLE_USER, b.su())
    elif pid is PackageId.W2:
        # i-th iteration: i DM tasks, then OPTIMIZE; reads follow every write phase
        b.add("su_0", PhaseType.SINGLE_USER, b.su())
        for i in range(1, k + 1):
            b.add(f"dm_{i}", PhaseType.DATA_MAINTENANCE, b.dm(i))
            b.add(f"su_{i}_dm", PhaseType.SINGLE_USER, b.su())
            b.add(f"o_{i}", PhaseType.OPTIMIZE, b.opt())
            b.add(f"su_{i}_o", PhaseType.SINGLE_USER, b.su())
    elif pid in (PackageId.W3, PackageId.W3_MULTI):
        b.add("su_0", PhaseType.SINGLE_USER, b.su())
        for i in range(1, k + 1):
            b.add(f"dm_{i}", PhaseType.DATA_MAINTENANCE, b.dm(i), b.su())
            b.add(f"o_{i}", PhaseType.OPTIMIZE, b.opt(), b.su())
    elif pid is PackageId.W4:
        for i in range(1, k + 1):
            b.add(f"dm_{i}", PhaseType.DATA_MAINTENANCE, b.dm())
        for j in range(k + 1):
            source = "load" if j == 0 else f"dm_{j}"
            tt = SessionSpec((TaskRef("time_travel", {"asof_phase": source}),), b.read)
            b.add(f"tt_{j}", PhaseType.TIME_TRAVEL, tt)
    spec = WorkloadSpec(pid.value.lower(), tuple(b.phases), dict(cfg.params))
    validate(spec)
    return spec


def required_refreshes(spec: WorkloadSpec) -> int:
    """Highest refresh stream index a workload's DM tasks reference."""
    best = 0
    for p in spec.phases:
        for s in p.sessions:
            for t in s.tasks:
                if "refresh" in t.params:
                    best = max(best, int(t.params["refresh"]))
    return best
