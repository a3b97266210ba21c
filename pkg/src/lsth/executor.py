"""Runs a workload: phases in order, the sessions of a phase concurrently.

Variable bindings for a statement, highest precedence first:

1. values injected from the run context (``asof_version``, ``load_version``)
2. task params, 3. session params, 4. phase params, 5. workload params
6. the target connection's options, 7. experiment globals (CLI overrides)
8. :data:`DEFAULT_BINDINGS`

A task with param ``asof_phase: <phase id>`` gets ``asof_version`` set to
the fact-table version recorded after that phase.  Versions are recorded
after every LOAD and DATA_MAINTENANCE phase.

Statement order inside a permutable task (the Single User query set) is a
SplitMix64 Fisher-Yates shuffle seeded by the task's ``permutation_seed``,
defaulting to the session index.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

from .connector import Connection, ConnectionKind, ConnectionPool, ConnectionSpec
from .datagen import SplitMix64
from .engine.counters import StorageCounters, shared_counters
from .errors import ConfigError, LsthError, TargetUnreachable
from .tasklib import DEFAULT_LIBRARY, DialectKey, LstKind, TaskTemplate, resolve_task, substitute
from .telemetry import CounterSample, EventRecord, Level, Status, utc_now
from .workload import PhaseSpec, PhaseType, SessionSpec, TaskRef, WorkloadSpec, expand_custom_task, max_concurrency

DEFAULT_BINDINGS = {
    "lst": "delta",
    "write_mode": "cow",
    "target_file_rows": "1000",
    "checkpoint_interval": "10",
    "data_dir": "data",
    "retain_versions": "1",
}
REGISTRY_TABLE = "fact"
_WRITE_TASKS = {"load", "data_maintenance"}
_PERMUTATION_STREAM = 0x5E55


class FailurePolicy(str, Enum):
    ABORT_EXPERIMENT = "ABORT_EXPERIMENT"
    ABORT_SESSION = "ABORT_SESSION"
    CONTINUE = "CONTINUE"


@dataclass
class ExperimentConfig:
    experiment_id: str
    targets: dict[str, ConnectionSpec]
    globals: dict[str, str] = field(default_factory=dict)
    failure_policy: FailurePolicy = FailurePolicy.ABORT_EXPERIMENT
    repetitions: int = 1
    library_root: Path = DEFAULT_LIBRARY

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        self.failure_policy = FailurePolicy(self.failure_policy)


@dataclass
class RunContext:
    t0: int
    clock: Callable[[], int] = time.monotonic_ns
    version_registry: dict[str, int] = field(default_factory=dict)
    load_version: int | None = None
    aborted: bool = False
    # phase-id suffix of the current repetition ("" for single runs)
    suffix: str = ""

    def now(self) -> int:
        return self.clock() - self.t0

    def record_version(self, phase_id: str, version: int, is_load: bool = False) -> None:
        if phase_id in self.version_registry:
            raise ConfigError(f"version for phase {phase_id!r} already recorded")
        self.version_registry[phase_id] = version
        if is_load and self.load_version is None:
            self.load_version = version

    def version_of(self, phase_id: str) -> int:
        for key in (phase_id + self.suffix, phase_id):
            if key in self.version_registry:
                return self.version_registry[key]
        raise ConfigError(f"no table version recorded for phase {phase_id!r}")


@dataclass
class SessionResult:
    phase_id: str
    session_idx: int
    statements: int = 0
    failures: int = 0
    skipped: int = 0
    counters: StorageCounters = field(default_factory=StorageCounters)
    start_ns: int = 0
    end_ns: int = 0


@dataclass
class PhaseResult:
    phase_id: str
    phase_type: PhaseType
    start_ns: int
    end_ns: int
    sessions: list[SessionResult]


@dataclass
class ExperimentResult:
    experiment_id: str
    phases: list[PhaseResult]
    version_registry: dict[str, int]
    pool_size: int
    peak_busy: dict[str, int]
    aborted: bool

    @property
    def failures(self) -> int:
        return sum(s.failures for p in self.phases for s in p.sessions)


def permutation(n: int, seed: int) -> list[int]:
    """Statement order for a permutable task; identical across implementations."""
    return SplitMix64.derive(_PERMUTATION_STREAM, seed).shuffle(list(range(n)))


class _Session:
    """Executes one session's tasks on one connection."""

    def __init__(self, runner: _Runner, phase: PhaseSpec, phase_id: str, idx: int, session: SessionSpec):
        self.r = runner
        self.phase = phase
        self.phase_id = phase_id
        self.idx = idx
        self.session = session
        self.result = SessionResult(phase_id, idx)
        self.stmt_idx = 0
        self.session_failed = False

    def _emit(self, task_idx: int, task_name: str, status: Status, start: int, dur: int, wall: str,
              counters: StorageCounters | None = None, error: str | None = None, sql: str | None = None) -> None:
        self.r.sink.append(EventRecord(
            self.r.cfg.experiment_id, self.phase_id, self.phase.phase_type.value, self.idx, task_name,
            self.stmt_idx, status, wall, dur, counters or StorageCounters(), error, Level.STATEMENT,
            task_idx, start, sql))
        self.stmt_idx += 1
        self.result.statements += 1
        if status is Status.FAILURE:
            self.result.failures += 1
        elif status is Status.SKIPPED:
            self.result.skipped += 1

    def _skipping(self) -> bool:
        return self.r.ctx.aborted or self.session_failed

    def _fail(self, task_idx: int, name: str, exc: Exception, start: int, wall: str, sql: str | None = None) -> None:
        self._emit(task_idx, name, Status.FAILURE, start, max(0, self.r.ctx.now() - start), wall,
                   error=f"{type(exc).__name__}: {exc}", sql=sql)
        policy = self.r.cfg.failure_policy
        if policy is FailurePolicy.ABORT_EXPERIMENT:
            self.r.ctx.aborted = True
        elif policy is FailurePolicy.ABORT_SESSION:
            self.session_failed = True

    def bindings(self, ref: TaskRef, conn_spec: ConnectionSpec) -> dict[str, str]:
        b: dict[str, str] = dict(DEFAULT_BINDINGS)
        b.update(self.r.cfg.globals)
        b.update(conn_spec.options)
        b.update(self.r.spec.params)
        b.update(self.phase.params)
        b.update(self.session.params)
        b.update(ref.params)
        ctx = self.r.ctx
        if ctx.load_version is not None:
            b["load_version"] = str(ctx.load_version)
        if "asof_phase" in ref.params:
            b["asof_version"] = str(ctx.version_of(ref.params["asof_phase"]))
        return b

    def templates(self, ref: TaskRef, conn: Connection, bindings: dict[str, str]) -> list[TaskTemplate]:
        if ref.generator is not None:
            return expand_custom_task(ref.generator, conn.catalog(), bindings)
        opts = conn.spec.options
        try:
            lst = LstKind.parse(opts.get("lst", bindings.get("lst", "generic")))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        key = DialectKey(opts.get("dialect", "minisql"), lst)
        return [resolve_task(ref.task_name, key, self.r.cfg.library_root)]

    def ordered(self, tpl: TaskTemplate, ref: TaskRef) -> list:
        stmts = list(tpl.statements)
        if tpl.permutable:
            seed = ref.permutation_seed if ref.permutation_seed is not None else self.idx
            stmts = [stmts[i] for i in permutation(len(stmts), seed)]
        return stmts

    def run(self, conn: Connection) -> SessionResult:
        if conn.closed:
            raise TargetUnreachable("session connection is closed")
        self.result.start_ns = self.r.ctx.now()
        for task_idx, ref in enumerate(self.session.tasks):
            start, wall = self.r.ctx.now(), utc_now()
            tpls: list[TaskTemplate] = []
            bindings: dict[str, str] = {}
            if not self._skipping():
                try:
                    bindings = self.bindings(ref, conn.spec)
                    tpls = self.templates(ref, conn, bindings)
                except LsthError as exc:
                    self._fail(task_idx, ref.label, exc, start, wall)
                    continue
            else:
                try:
                    tpls = self.templates(ref, conn, dict(DEFAULT_BINDINGS)) if ref.generator is None else []
                except LsthError:
                    tpls = []
                if not tpls:
                    self._emit(task_idx, ref.label, Status.SKIPPED, start, 0, wall)
                    continue
            for tpl in tpls:
                for stmt in self.ordered(tpl, ref):
                    start, wall = self.r.ctx.now(), utc_now()
                    if self._skipping():
                        self._emit(task_idx, tpl.name, Status.SKIPPED, start, 0, wall, sql=stmt.raw_text)
                        continue
                    try:
                        sql = substitute(stmt, bindings)
                    except LsthError as exc:
                        self._fail(task_idx, tpl.name, exc, start, wall, stmt.raw_text)
                        continue
                    t_begin = self.r.ctx.clock()
                    try:
                        res = conn.execute(sql)
                    except LsthError as exc:
                        self._fail(task_idx, tpl.name, exc, start, wall, sql)
                        continue
                    dur = self.r.ctx.clock() - t_begin
                    self.result.counters = self.result.counters + res.counters
                    self._emit(task_idx, tpl.name, Status.SUCCESS, start, dur, wall, res.counters, sql=sql)
        self.result.end_ns = self.r.ctx.now()
        return self.result


class _Runner:
    def __init__(self, spec: WorkloadSpec, cfg: ExperimentConfig, sink):
        self.spec = spec
        self.cfg = cfg
        self.sink = sink
        self.ctx = RunContext(time.monotonic_ns())

    def sample(self, label: str) -> None:
        for name, t in sorted(self.cfg.targets.items()):
            if t.kind is ConnectionKind.MINI_LST:
                snap = shared_counters(t.storage_root).snapshot()
                self.sink.append_sample(CounterSample(f"{name}:{t.storage_root}", utc_now(), snap, label))

    def run_phase(self, phase: PhaseSpec, phase_id: str, pools: dict[str, ConnectionPool]) -> PhaseResult:
        self.sample(f"{phase_id}:start")
        start, wall = self.ctx.now(), utc_now()
        sessions = [_Session(self, phase, phase_id, i, s) for i, s in enumerate(phase.sessions)]

        def work(sess: _Session) -> SessionResult:
            pool = pools[sess.session.target]
            conn = pool.acquire(f"{phase_id}-{sess.idx}")
            try:
                return sess.run(conn)
            finally:
                pool.release(conn)

        with ThreadPoolExecutor(max_workers=len(sessions), thread_name_prefix=f"lsth-{phase_id}") as ex:
            results = list(ex.map(work, sessions))
        end = self.ctx.now()
        total = StorageCounters()
        for r in results:
            total = total + r.counters
        failures = sum(r.failures for r in results)
        skipped = sum(r.skipped for r in results)
        status = Status.FAILURE if failures else (Status.SKIPPED if skipped and skipped == sum(r.statements for r in results) else Status.SUCCESS)
        self.sink.append(EventRecord(self.cfg.experiment_id, phase_id, phase.phase_type.value, -1, "", -1,
                                     status, wall, end - start, total, None, Level.PHASE, -1, start))
        self.sample(f"{phase_id}:end")
        if not self.ctx.aborted and phase.phase_type in (PhaseType.LOAD, PhaseType.DATA_MAINTENANCE):
            writers = [s.target for s in phase.sessions
                       if any(t.generator is not None or t.task_name in _WRITE_TASKS for t in s.tasks)]
            target = writers[0] if writers else phase.sessions[0].target
            version = pools[target].probe().current_version(
                self.cfg.globals.get("registry_table", REGISTRY_TABLE))
            if version is not None:
                self.ctx.record_version(phase_id, version, phase.phase_type is PhaseType.LOAD)
        return PhaseResult(phase_id, phase.phase_type, start, end, results)


def open_pools(spec: WorkloadSpec, cfg: ExperimentConfig) -> dict[str, ConnectionPool]:
    missing = spec.targets() - set(cfg.targets)
    if missing:
        raise ConfigError(f"workload references undefined targets {sorted(missing)}")
    size = max_concurrency(spec)
    pools = {}
    try:
        for name in sorted(spec.targets()):
            pools[name] = ConnectionPool(cfg.targets[name], size)
    except TargetUnreachable:
        for p in pools.values():
            p.close()
        raise
    return pools


def run_experiment(spec: WorkloadSpec, cfg: ExperimentConfig, sink) -> ExperimentResult:
    """Execute ``spec`` and stream telemetry into ``sink``.

    Raises TargetUnreachable before any phase runs if a target cannot be
    opened.  Statement failures follow ``cfg.failure_policy``; under the
    default ABORT_EXPERIMENT every later statement is recorded as SKIPPED.
    """
    pools = open_pools(spec, cfg)
    runner = _Runner(spec, cfg, sink)
    phases: list[PhaseResult] = []
    wall = utc_now()
    try:
        for rep in range(cfg.repetitions):
            runner.ctx.suffix = "" if cfg.repetitions == 1 else f".r{rep + 1}"
            for phase in spec.phases:
                pid = phase.id if cfg.repetitions == 1 else f"{phase.id}.r{rep + 1}"
                phases.append(runner.run_phase(phase, pid, pools))
    finally:
        for p in pools.values():
            p.close()
    end = runner.ctx.now()
    failures = sum(s.failures for p in phases for s in p.sessions)
    sink.append(EventRecord(cfg.experiment_id, "", "", -1, "", -1,
                            Status.FAILURE if failures else Status.SUCCESS, wall, end, StorageCounters(),
                            "aborted" if runner.ctx.aborted else None, Level.EXPERIMENT, -1, 0))
    return ExperimentResult(cfg.experiment_id, phases, dict(runner.ctx.version_registry), max_concurrency(spec),
                            {n: p.peak_busy for n, p in pools.items()}, runner.ctx.aborted)
