"""Workload representation: workload -> phases -> sessions -> tasks.

Documents are YAML::

    id: w1
    params: {scale: "1000"}
    phases:
      - id: load
        type: LOAD
        params: {}
        sessions:
          - target: default
            params: {}
            tasks:
              - task: load
              - generator: {name: batched_dm, params: {source: x.csv, batch_rows: "40"}}
              - {task: single_user, permutation_seed: 3, params: {k: v}}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

import yaml

from .errors import DocumentSyntaxError, GeneratorError, GeneratorNotFound, ValidationError
from .tasklib import StatementTemplate, TaskTemplate, substitute, task_names


class PhaseType(str, Enum):
    LOAD = "LOAD"
    SINGLE_USER = "SINGLE_USER"
    THROUGHPUT = "THROUGHPUT"
    DATA_MAINTENANCE = "DATA_MAINTENANCE"
    OPTIMIZE = "OPTIMIZE"
    TIME_TRAVEL = "TIME_TRAVEL"
    CUSTOM = "CUSTOM"


@dataclass(frozen=True)
class GeneratorRef:
    name: str
    params: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class TaskRef:
    task_name: str | None = None
    params: dict[str, str] = field(default_factory=dict)
    generator: GeneratorRef | None = None
    permutation_seed: int | None = None

    def __post_init__(self) -> None:
        if (self.task_name is None) == (self.generator is None):
            raise ValidationError("a task needs exactly one of 'task' or 'generator'")

    @property
    def label(self) -> str:
        return self.task_name if self.task_name is not None else f"generator:{self.generator.name}"


@dataclass(frozen=True)
class SessionSpec:
    tasks: tuple[TaskRef, ...]
    target: str = "default"
    params: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class PhaseSpec:
    id: str
    phase_type: PhaseType
    sessions: tuple[SessionSpec, ...]
    params: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class WorkloadSpec:
    id: str
    phases: tuple[PhaseSpec, ...]
    params: dict[str, str] = field(default_factory=dict)

    def targets(self) -> set[str]:
        return {s.target for p in self.phases for s in p.sessions}


# -- custom task generators --------------------------------------------------------

Generator = Callable[[GeneratorRef, "object"], list[TaskTemplate]]
GENERATORS: dict[str, Generator] = {}


def register_generator(name: str) -> Callable[[Generator], Generator]:
    def deco(fn: Generator) -> Generator:
        GENERATORS[name] = fn
        return fn
    return deco


def _int_param(ref: GeneratorRef, *names: str) -> int:
    for n in names:
        if n in ref.params:
            try:
                return int(ref.params[n])
            except ValueError:
                raise GeneratorError(f"{ref.name}: parameter {n} must be an integer") from None
    raise GeneratorError(f"{ref.name}: missing parameter {names[0]}")


@register_generator("batched_dm")
def batched_dm(ref: GeneratorRef, catalog) -> list[TaskTemplate]:
    """Split one MERGE source of R rows into ceil(R/n) MERGEs of at most n rows."""
    source = ref.params.get("source")
    if not source:
        raise GeneratorError("batched_dm: missing parameter source")
    n = _int_param(ref, "batch_rows", "n")
    if n < 1:
        raise GeneratorError("batched_dm: batch_rows must be >= 1")
    table = ref.params.get("table", "fact")
    try:
        total = catalog.source_rows(source)
    except NotImplementedError as exc:
        raise GeneratorError(f"batched_dm: catalog cannot introspect sources: {exc}") from None
    except OSError as exc:
        raise GeneratorError(f"batched_dm: cannot read {source}: {exc}") from None
    out = []
    for b in range(math.ceil(total / n)):
        lo, hi = b * n, min(total, (b + 1) * n)
        stmt = StatementTemplate(f"MERGE INTO {table} USING '{source}' ROWS {lo} TO {hi}")
        out.append(TaskTemplate(f"batched_dm_{b:04d}", (stmt,), f"generator:{ref.name}"))
    return out


def expand_custom_task(ref: GeneratorRef, catalog, bindings: Mapping[str, object] | None = None) -> list[TaskTemplate]:
    """Run a registered generator; string params are ``${}``-substituted first."""
    fn = GENERATORS.get(ref.name)
    if fn is None:
        raise GeneratorNotFound(f"no generator named {ref.name!r}")
    if bindings is not None:
        ref = GeneratorRef(ref.name, {k: substitute(v, bindings) for k, v in ref.params.items()})
    try:
        return fn(ref, catalog)
    except GeneratorError:
        raise
    except Exception as exc:  # user generator code
        raise GeneratorError(f"{ref.name}: {exc}") from exc


# -- parsing -------------------------------------------------------------------------

def _check_keys(obj: object, allowed: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise DocumentSyntaxError(f"{where}: expected a mapping, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(map(str, unknown))}")
    return obj


def _params(obj: object, where: str) -> dict[str, str]:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise DocumentSyntaxError(f"{where}.params: expected a mapping")
    return {str(k): str(v) for k, v in obj.items()}


def _list(obj: object, where: str) -> list:
    if not isinstance(obj, list):
        raise DocumentSyntaxError(f"{where}: expected a list")
    return obj


def _task(obj: object, where: str) -> TaskRef:
    d = _check_keys(obj, {"task", "generator", "params", "permutation_seed"}, where)
    gen = None
    if "generator" in d:
        g = d["generator"]
        if isinstance(g, str):
            gen = GeneratorRef(g, {})
        else:
            gd = _check_keys(g, {"name", "params"}, f"{where}.generator")
            if "name" not in gd:
                raise ValidationError(f"{where}.generator: missing name")
            gen = GeneratorRef(str(gd["name"]), _params(gd.get("params"), f"{where}.generator"))
    seed = d.get("permutation_seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ValidationError(f"{where}.permutation_seed: expected an integer")
    task = d.get("task")
    if gen is not None and task is not None:
        raise ValidationError(f"{where}: a task needs exactly one of 'task' or 'generator'")
    if gen is not None and isinstance(d.get("generator"), str):
        # short form: generator params live under the task's params
        gen = GeneratorRef(gen.name, _params(d.get("params"), where))
        return TaskRef(None, {}, gen, seed)
    return TaskRef(str(task) if task is not None else None, _params(d.get("params"), where), gen, seed)


def _session(obj: object, where: str) -> SessionSpec:
    d = _check_keys(obj, {"target", "tasks", "params"}, where)
    tasks = tuple(_task(t, f"{where}.tasks[{i}]") for i, t in enumerate(_list(d.get("tasks", []), f"{where}.tasks")))
    if not tasks:
        raise ValidationError(f"{where}: session has no tasks")
    return SessionSpec(tasks, str(d.get("target", "default")), _params(d.get("params"), where))


def _phase(obj: object, where: str) -> PhaseSpec:
    d = _check_keys(obj, {"id", "type", "sessions", "params"}, where)
    if "id" not in d:
        raise ValidationError(f"{where}: missing id")
    try:
        ptype = PhaseType(str(d.get("type", "CUSTOM")).upper())
    except ValueError:
        raise ValidationError(f"{where}: unknown phase type {d.get('type')!r}") from None
    sessions = tuple(_session(s, f"{where}.sessions[{i}]")
                     for i, s in enumerate(_list(d.get("sessions", []), f"{where}.sessions")))
    if not sessions:
        raise ValidationError(f"phase {d['id']!r} has no sessions")
    return PhaseSpec(str(d["id"]), ptype, sessions, _params(d.get("params"), where))


def validate(spec: WorkloadSpec, known_tasks: Iterable[str] | None = None) -> None:
    known = set(known_tasks) if known_tasks is not None else task_names()
    seen: set[str] = set()
    for p in spec.phases:
        if p.id in seen:
            raise ValidationError(f"duplicate phase id {p.id!r}")
        seen.add(p.id)
        for s in p.sessions:
            for t in s.tasks:
                if t.generator is not None:
                    if t.generator.name not in GENERATORS:
                        raise ValidationError(f"phase {p.id}: unregistered generator {t.generator.name!r}")
                elif t.task_name not in known:
                    raise ValidationError(f"phase {p.id}: unknown task {t.task_name!r}")
    if not spec.phases:
        raise ValidationError("workload has no phases")


def from_dict(doc: object, known_tasks: Iterable[str] | None = None) -> WorkloadSpec:
    d = _check_keys(doc, {"id", "params", "phases"}, "workload")
    if "id" not in d:
        raise ValidationError("workload: missing id")
    phases = tuple(_phase(p, f"phases[{i}]") for i, p in enumerate(_list(d.get("phases", []), "phases")))
    spec = WorkloadSpec(str(d["id"]), phases, _params(d.get("params"), "workload"))
    validate(spec, known_tasks)
    return spec


def parse_workload(document: str, known_tasks: Iterable[str] | None = None) -> WorkloadSpec:
    """Parse and validate a YAML workload document.

    ``known_tasks`` defaults to the tasks of the shipped library.
    """
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise DocumentSyntaxError(f"malformed workload document: {exc}") from None
    return from_dict(doc, known_tasks)


def to_dict(spec: WorkloadSpec) -> dict:
    def task(t: TaskRef) -> dict:
        out: dict = {}
        if t.task_name is not None:
            out["task"] = t.task_name
        else:
            out["generator"] = {"name": t.generator.name, "params": dict(t.generator.params)}
        if t.params:
            out["params"] = dict(t.params)
        if t.permutation_seed is not None:
            out["permutation_seed"] = t.permutation_seed
        return out

    return {
        "id": spec.id,
        "params": dict(spec.params),
        "phases": [
            {
                "id": p.id,
                "type": p.phase_type.value,
                "params": dict(p.params),
                "sessions": [
                    {"target": s.target, "params": dict(s.params), "tasks": [task(t) for t in s.tasks]}
                    for s in p.sessions
                ],
            }
            for p in spec.phases
        ],
    }


def serialize_workload(spec: WorkloadSpec) -> str:
    return yaml.safe_dump(to_dict(spec), sort_keys=False)


def max_concurrency(spec: WorkloadSpec) -> int:
    return max((len(p.sessions) for p in spec.phases), default=1)
