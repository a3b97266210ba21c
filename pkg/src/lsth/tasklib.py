"""SQL task templates on disk and ``${name}`` substitution.

Library layout::

    <root>/<task>/<dialect>/<lst>/NN_name.sql

where ``<lst>`` is ``delta``, ``iceberg``, ``hudi`` or ``generic``.  A task
resolves to the most specific directory (its LST first, then ``generic``);
the ``.sql`` files there are read in lexicographic order and each may hold
several ``;``-separated statements.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping

from .engine.sql import split_statements
from .errors import EmptyTask, MissingVariable, TaskNotFound

VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
DEFAULT_LIBRARY = Path(__file__).parent / "library"
PERMUTABLE_MARKER = "PERMUTABLE"


class LstKind(str, Enum):
    DELTA_STYLE = "delta"
    ICEBERG_STYLE = "iceberg"
    HUDI_STYLE = "hudi"
    GENERIC = "generic"

    @classmethod
    def parse(cls, text: str) -> LstKind:
        t = text.strip().lower()
        for k in cls:
            if t in (k.value, k.name.lower()):
                return k
        raise ValueError(f"unknown LST kind {text!r}")


@dataclass(frozen=True)
class StatementTemplate:
    raw_text: str

    @property
    def variables(self) -> frozenset[str]:
        return frozenset(VAR.findall(self.raw_text))


@dataclass(frozen=True)
class TaskTemplate:
    name: str
    statements: tuple[StatementTemplate, ...]
    source_path: str = ""
    # Single-User style tasks whose statements may be reordered per stream
    permutable: bool = False

    def __post_init__(self) -> None:
        if not self.statements:
            raise EmptyTask(f"task {self.name!r} has no statements")


@dataclass(frozen=True)
class DialectKey:
    dialect: str = "minisql"
    lst: LstKind = LstKind.GENERIC


def substitute(tpl: StatementTemplate | str, bindings: Mapping[str, object]) -> str:
    """Replace every ``${name}``; an unbound name raises MissingVariable."""
    text = tpl.raw_text if isinstance(tpl, StatementTemplate) else tpl

    def repl(m: re.Match) -> str:
        name = m.group(1)
        if name not in bindings:
            raise MissingVariable(name)
        return str(bindings[name])

    return VAR.sub(repl, text)


def task_names(library_root: str | Path = DEFAULT_LIBRARY) -> set[str]:
    root = Path(library_root)
    if not root.is_dir():
        return set()
    return {p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith((".", "_"))}


def resolve_task(name: str, key: DialectKey = DialectKey(), library_root: str | Path = DEFAULT_LIBRARY) -> TaskTemplate:
    task_dir = Path(library_root) / name
    if not task_dir.is_dir():
        raise TaskNotFound(f"task {name!r} not found in {library_root}")
    candidates = [key.lst.value] if key.lst is LstKind.GENERIC else [key.lst.value, LstKind.GENERIC.value]
    for lst in candidates:
        d = task_dir / key.dialect / lst
        if not d.is_dir():
            continue
        statements = []
        files = sorted(p for p in d.iterdir() if p.suffix == ".sql")
        for f in files:
            statements += [StatementTemplate(s) for s in split_statements(f.read_text(encoding="utf-8"))]
        if not statements:
            raise EmptyTask(f"task {name!r} at {d} has no statements")
        return TaskTemplate(name, tuple(statements), str(d), (task_dir / PERMUTABLE_MARKER).exists())
    raise TaskNotFound(f"task {name!r} has no {key.dialect}/{key.lst.value} variant")
