"""minisql: the statement dialect understood by the mini-LST engine.

Grammar (keywords are case-insensitive)::

    CREATE TABLE [IF NOT EXISTS] t (col TYPE, ...) USING delta|iceberg|hudi
        MODE cow|mor KEY col TARGET n [CHECKPOINT n]
    DROP TABLE [IF EXISTS] t
    COPY INTO t FROM 'file.csv'
    MERGE INTO t USING 'file.csv' [ROWS a TO b]
    DELETE FROM t WHERE col IN (v, ...)
    SELECT items FROM t [JOIN t2 ON a = b] [WHERE cond AND ...]
        [GROUP BY col] [ORDER BY col|n [ASC|DESC]] [LIMIT n] [AS OF VERSION v]
    OPTIMIZE t | CALL rewrite_data_files('t') | CALL run_compaction('t')
    VACUUM t RETAIN n VERSIONS

Select items are ``*``, columns and count/sum/min/max/avg aggregates
(``count(DISTINCT col)`` included), each with an optional ``AS alias``.
Conditions compare a column with a literal (= != <> < <= > >=), or use
BETWEEN or IN.  A MERGE source may carry an ``op`` column whose value ``D``
marks a delete of that key; every other row is an upsert.  ``ROWS a TO b``
restricts the source to data rows [a, b).
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any

from ..errors import ExecError, ParseError, SchemaMismatch
from .model import ColumnType, Layout, TableDescriptor, WriteMode, decode_value
from .table import Condition, Engine

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
    |(?P<str>'(?:[^']|'')*')
    |(?P<num>\d+(?:\.\d+)?)
    |(?P<id>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
    |(?P<op><=|>=|!=|<>|[=<>(),*;-])
    """,
    re.VERBOSE,
)

_TYPES = {
    "INT64": ColumnType.INT64, "BIGINT": ColumnType.INT64, "INT": ColumnType.INT64, "INTEGER": ColumnType.INT64,
    "DECIMAL": ColumnType.DECIMAL, "NUMERIC": ColumnType.DECIMAL,
    "STRING": ColumnType.STRING, "VARCHAR": ColumnType.STRING, "TEXT": ColumnType.STRING,
    "DATE": ColumnType.DATE,
}
_LAYOUTS = {"delta": Layout.DELTA_STYLE, "iceberg": Layout.ICEBERG_STYLE, "hudi": Layout.HUDI_STYLE}
_MODES = {"cow": WriteMode.COW, "mor": WriteMode.MOR}
_AGGS = {"COUNT", "SUM", "MIN", "MAX", "AVG"}
_OPTIMIZE_PROCS = {"rewrite_data_files", "run_compaction", "optimize"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int

    @property
    def upper(self) -> str:
        return self.text.upper()


def tokenize(sql: str) -> list[Token]:
    out = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN.match(sql, pos)
        if m is None:
            raise ParseError(f"unexpected character {sql[pos]!r} at offset {pos}")
        if m.lastgroup != "ws":
            out.append(Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    return out


def split_statements(text: str) -> list[str]:
    """Split on ``;`` outside quoted strings, dropping ``--`` comments and blanks.

    Works on raw template text, so ``${var}`` placeholders pass through intact.
    """
    parts, buf = [], []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "'":
            j = i + 1
            while j < n:
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        j += 2
                        continue
                    break
                j += 1
            buf.append(text[i:j + 1])
            i = j + 1
        elif text.startswith("--", i):
            nl = text.find("\n", i)
            i = n if nl < 0 else nl
        elif ch == ";":
            parts.append("".join(buf))
            buf = []
            i += 1
        else:
            buf.append(ch)
            i += 1
    parts.append("".join(buf))
    return [p.strip() for p in parts if p.strip()]


# -- AST -----------------------------------------------------------------------

@dataclass
class Literal:
    value: Any  # str for quoted strings, Decimal/int for numbers


@dataclass
class CondAst:
    column: str
    op: str
    values: list[Literal]


@dataclass
class SelectItem:
    kind: str  # star | col | agg
    column: str | None = None
    func: str | None = None
    distinct: bool = False
    alias: str | None = None

    def label(self) -> str:
        if self.alias:
            return self.alias
        if self.kind == "col":
            return self.column.split(".")[-1]
        arg = self.column or "*"
        return f"{self.func.lower()}({'DISTINCT ' if self.distinct else ''}{arg})"


@dataclass
class Select:
    items: list[SelectItem]
    table: str
    join: tuple[str, str, str] | None = None  # (table, left col, right col)
    where: list[CondAst] = field(default_factory=list)
    group_by: str | None = None
    order_by: str | int | None = None
    descending: bool = False
    limit: int | None = None
    asof: int | None = None


@dataclass
class CreateTable:
    desc: TableDescriptor
    if_not_exists: bool


@dataclass
class DropTable:
    table: str
    if_exists: bool


@dataclass
class CopyInto:
    table: str
    path: str


@dataclass
class MergeInto:
    table: str
    path: str
    row_range: tuple[int, int] | None = None


@dataclass
class DeleteKeys:
    table: str
    column: str
    values: list[Literal]


@dataclass
class Optimize:
    table: str


@dataclass
class Vacuum:
    table: str
    retain: int


def _table_name(ident: str) -> str:
    # schema-qualified names (db.fact) address the table by its last part
    return ident.split(".")[-1]


class _Parser:
    def __init__(self, sql: str):
        self.toks = [t for t in tokenize(sql) if not (t.kind == "op" and t.text == ";")]
        self.i = 0

    def peek(self, ahead: int = 0) -> Token | None:
        j = self.i + ahead
        return self.toks[j] if j < len(self.toks) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of statement")
        self.i += 1
        return tok

    def at_kw(self, *words: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "id" and tok.upper in words

    def accept_kw(self, word: str) -> bool:
        if self.at_kw(word):
            self.i += 1
            return True
        return False

    def expect_kw(self, word: str) -> None:
        if not self.accept_kw(word):
            self._fail(f"expected {word}")

    def accept_op(self, op: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text == op:
            self.i += 1
            return True
        return False

    def expect_op(self, op: str) -> None:
        if not self.accept_op(op):
            self._fail(f"expected {op!r}")

    def ident(self) -> str:
        tok = self.next()
        if tok.kind != "id":
            raise ParseError(f"expected identifier at offset {tok.pos}, got {tok.text!r}")
        return tok.text

    def integer(self) -> int:
        tok = self.next()
        if tok.kind != "num" or "." in tok.text:
            raise ParseError(f"expected integer at offset {tok.pos}, got {tok.text!r}")
        return int(tok.text)

    def string(self) -> str:
        tok = self.next()
        if tok.kind != "str":
            raise ParseError(f"expected quoted string at offset {tok.pos}, got {tok.text!r}")
        return tok.text[1:-1].replace("''", "'")

    def literal(self) -> Literal:
        neg = self.accept_op("-")
        tok = self.next()
        if tok.kind == "str" and not neg:
            return Literal(tok.text[1:-1].replace("''", "'"))
        if tok.kind == "num":
            v = Decimal(tok.text) if "." in tok.text else int(tok.text)
            return Literal(-v if neg else v)
        raise ParseError(f"expected literal at offset {tok.pos}, got {tok.text!r}")

    def _fail(self, msg: str):
        tok = self.peek()
        where = f"at offset {tok.pos} near {tok.text!r}" if tok else "at end of statement"
        raise ParseError(f"{msg} {where}")

    def done(self) -> None:
        if self.peek() is not None:
            self._fail("unexpected trailing input")

    # -- statements --

    def statement(self):
        if not self.toks:
            raise ParseError("empty statement")
        head = self.peek().upper
        handler = {
            "SELECT": self.select, "CREATE": self.create, "DROP": self.drop, "COPY": self.copy,
            "MERGE": self.merge, "DELETE": self.delete, "OPTIMIZE": self.optimize,
            "CALL": self.call, "VACUUM": self.vacuum,
        }.get(head)
        if handler is None:
            self._fail("unknown statement")
        self.i += 1
        node = handler()
        self.done()
        return node

    def create(self) -> CreateTable:
        self.expect_kw("TABLE")
        if_not_exists = False
        if self.accept_kw("IF"):
            self.expect_kw("NOT")
            self.expect_kw("EXISTS")
            if_not_exists = True
        name = _table_name(self.ident())
        self.expect_op("(")
        cols = []
        while True:
            col = self.ident()
            tname = self.ident().upper()
            if tname not in _TYPES:
                raise ParseError(f"unknown column type {tname}")
            if self.accept_op("("):  # DECIMAL(12,2) precision is accepted and ignored
                self.integer()
                while self.accept_op(","):
                    self.integer()
                self.expect_op(")")
            cols.append((col, _TYPES[tname]))
            if not self.accept_op(","):
                break
        self.expect_op(")")
        self.expect_kw("USING")
        fmt = self.ident().lower()
        self.expect_kw("MODE")
        mode = self.ident().lower()
        if fmt not in _LAYOUTS or mode not in _MODES:
            raise ParseError(f"unknown table format {fmt!r} or mode {mode!r}")
        self.expect_kw("KEY")
        key = self.ident()
        self.expect_kw("TARGET")
        target = self.integer()
        checkpoint = self.integer() if self.accept_kw("CHECKPOINT") else 10
        desc = TableDescriptor(name, tuple(cols), _LAYOUTS[fmt], _MODES[mode], key, target, checkpoint)
        return CreateTable(desc, if_not_exists)

    def drop(self) -> DropTable:
        self.expect_kw("TABLE")
        if_exists = False
        if self.accept_kw("IF"):
            self.expect_kw("EXISTS")
            if_exists = True
        return DropTable(_table_name(self.ident()), if_exists)

    def copy(self) -> CopyInto:
        self.expect_kw("INTO")
        table = _table_name(self.ident())
        self.expect_kw("FROM")
        return CopyInto(table, self.string())

    def merge(self) -> MergeInto:
        self.expect_kw("INTO")
        table = _table_name(self.ident())
        self.expect_kw("USING")
        path = self.string()
        rng = None
        if self.accept_kw("ROWS"):
            lo = self.integer()
            self.expect_kw("TO")
            hi = self.integer()
            if hi < lo:
                raise ParseError(f"empty row range {lo} TO {hi}")
            rng = (lo, hi)
        return MergeInto(table, path, rng)

    def delete(self) -> DeleteKeys:
        self.expect_kw("FROM")
        table = _table_name(self.ident())
        self.expect_kw("WHERE")
        col = self.ident()
        self.expect_kw("IN")
        return DeleteKeys(table, col, self.literal_list())

    def literal_list(self) -> list[Literal]:
        self.expect_op("(")
        vals = [self.literal()]
        while self.accept_op(","):
            vals.append(self.literal())
        self.expect_op(")")
        return vals

    def optimize(self) -> Optimize:
        return Optimize(_table_name(self.ident()))

    def call(self) -> Optimize:
        proc = self.ident().split(".")[-1].lower()
        if proc not in _OPTIMIZE_PROCS:
            raise ParseError(f"unknown procedure {proc!r}")
        self.expect_op("(")
        table = _table_name(self.string())
        self.expect_op(")")
        return Optimize(table)

    def vacuum(self) -> Vacuum:
        table = _table_name(self.ident())
        self.expect_kw("RETAIN")
        n = self.integer()
        self.expect_kw("VERSIONS")
        return Vacuum(table, n)

    def select_item(self) -> SelectItem:
        if self.accept_op("*"):
            return SelectItem("star")
        tok = self.peek()
        nxt = self.peek(1)
        if tok is not None and tok.kind == "id" and tok.upper in _AGGS and nxt is not None and nxt.text == "(":
            self.i += 2
            func = tok.upper
            distinct = self.accept_kw("DISTINCT")
            if self.accept_op("*"):
                if func != "COUNT" or distinct:
                    raise ParseError(f"{func}(*) is not supported")
                col = None
            else:
                col = self.ident()
            self.expect_op(")")
            item = SelectItem("agg", col, func, distinct)
        else:
            item = SelectItem("col", self.ident())
        if self.accept_kw("AS"):
            item.alias = self.ident()
        return item

    def condition(self) -> CondAst:
        col = self.ident()
        if self.accept_kw("BETWEEN"):
            lo = self.literal()
            self.expect_kw("AND")
            return CondAst(col, "between", [lo, self.literal()])
        if self.accept_kw("IN"):
            return CondAst(col, "in", self.literal_list())
        tok = self.next()
        if tok.kind != "op" or tok.text not in ("=", "!=", "<>", "<", "<=", ">", ">="):
            raise ParseError(f"expected comparison at offset {tok.pos}, got {tok.text!r}")
        return CondAst(col, "!=" if tok.text == "<>" else tok.text, [self.literal()])

    def select(self) -> Select:
        items = [self.select_item()]
        while self.accept_op(","):
            items.append(self.select_item())
        self.expect_kw("FROM")
        node = Select(items, _table_name(self.ident()))
        if self.accept_kw("JOIN"):
            other = _table_name(self.ident())
            self.expect_kw("ON")
            left = self.ident()
            self.expect_op("=")
            node.join = (other, left, self.ident())
        if self.accept_kw("WHERE"):
            node.where.append(self.condition())
            while self.accept_kw("AND"):
                node.where.append(self.condition())
        if self.accept_kw("GROUP"):
            self.expect_kw("BY")
            node.group_by = self.ident()
        if self.accept_kw("ORDER"):
            self.expect_kw("BY")
            tok = self.peek()
            node.order_by = self.integer() if tok is not None and tok.kind == "num" else self.ident()
            if self.accept_kw("DESC"):
                node.descending = True
            else:
                self.accept_kw("ASC")
        if self.accept_kw("LIMIT"):
            node.limit = self.integer()
        if self.accept_kw("AS"):
            self.expect_kw("OF")
            self.expect_kw("VERSION")
            node.asof = self.integer()
        return node


def parse(sql: str):
    return _Parser(sql).statement()


# -- execution -------------------------------------------------------------------

@dataclass
class QueryOutput:
    columns: list[str]
    rows: list[tuple]
    row_count: int
    scalar_aggregate: bool = False


def _read_csv(engine: Engine, path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        text = engine.store.read_external(path).decode("utf-8")
    except FileNotFoundError:
        raise ExecError(f"source file not found: {path}") from None
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None:
        raise SchemaMismatch(f"source file {path} has no header")
    return header, [r for r in reader if r]


def _project_source(desc: TableDescriptor, header: list[str], rows: list[list[str]]) -> tuple[list[list[str]], list[str] | None]:
    """Reorder CSV columns into table order; returns (rows, op column or None)."""
    try:
        idx = [header.index(c) for c in desc.column_names]
    except ValueError:
        raise SchemaMismatch(f"source header {header} does not cover columns {desc.column_names}") from None
    extra = set(header) - set(desc.column_names) - {"op"}
    if extra:
        raise SchemaMismatch(f"source has unknown columns {sorted(extra)}")
    op_i = header.index("op") if "op" in header else None
    ops = [r[op_i].strip().upper() for r in rows] if op_i is not None else None
    return [[r[i] for i in idx] for r in rows], ops


def _typed(desc: TableDescriptor, column: str, lit: Literal) -> Any:
    try:
        return decode_value(desc.column_type(column), lit.value)
    except (ValueError, ArithmeticError):
        raise ExecError(f"literal {lit.value!r} does not fit column {column}") from None


class _Columns:
    """Column namespace of a (possibly joined) row."""

    def __init__(self, parts: list[tuple[str, TableDescriptor]]):
        self.parts = parts
        self.names = [(t, c) for t, d in parts for c in d.column_names]

    def resolve(self, ref: str) -> int:
        bits = ref.split(".")
        col = bits[-1]
        table = bits[-2] if len(bits) > 1 else None
        hits = [i for i, (t, c) in enumerate(self.names) if c == col and (table is None or t == table)]
        if not hits:
            raise ExecError(f"unknown column {ref!r}")
        if len(hits) > 1:
            raise ExecError(f"ambiguous column {ref!r}")
        return hits[0]

    def owner(self, ref: str) -> tuple[str, str]:
        return self.names[self.resolve(ref)]

    def desc_of(self, table: str) -> TableDescriptor:
        return next(d for t, d in self.parts if t == table)


def _aggregate(item: SelectItem, values: list) -> Any:
    func = item.func
    if func == "COUNT":
        if item.column is None:
            return len(values)
        present = [v for v in values if v is not None]
        return len(set(present)) if item.distinct else len(present)
    vals = set(values) if item.distinct else values
    vals = [v for v in vals if v is not None]
    if not vals:
        return None
    if func == "SUM":
        return sum(vals, type(vals[0])(0))
    if func == "MIN":
        return min(vals)
    if func == "MAX":
        return max(vals)
    total = sum(Decimal(v) for v in vals)
    return total / len(vals)


def _run_select(engine: Engine, q: Select) -> QueryOutput:
    tables = [q.table] + ([q.join[0]] if q.join else [])
    if q.join and q.join[0] == q.table:
        raise ExecError("self-joins are not supported")
    snaps = {q.table: engine.read_metadata(q.table, q.asof)}
    if q.join:
        snaps[q.join[0]] = engine.read_metadata(q.join[0])
    descs = {t: s.descriptor for t, s in snaps.items()}
    cols = _Columns([(t, descs[t]) for t in tables])
    pushed: dict[str, list[Condition]] = {t: [] for t in tables}
    for c in q.where:
        t, col = cols.owner(c.column)
        vals = [_typed(descs[t], col, v) for v in c.values]
        if c.op == "between":
            cond = Condition(col, "between", vals[0], vals[1])
        elif c.op == "in":
            cond = Condition(col, "in", frozenset(vals))
        else:
            cond = Condition(col, c.op, vals[0])
        pushed[t].append(cond)
    left = engine.scan_snapshot(snaps[q.table], pushed[q.table]).rows
    if q.join:
        other, a, b = q.join
        right = engine.scan_snapshot(snaps[other], pushed[other]).rows
        ia, ib = cols.resolve(a), cols.resolve(b)
        width = len(descs[q.table].column_names)
        if ia >= width:  # ON written as other.col = table.col
            ia, ib = ib, ia
        if ia >= width or ib < width:
            raise ExecError("join condition must compare one column of each table")
        index: dict[Any, list[tuple]] = {}
        for r in right:
            index.setdefault(r[ib - width], []).append(r)
        rows = [l + r for l in left for r in index.get(l[ia], ())]
    else:
        rows = left

    has_agg = any(i.kind == "agg" for i in q.items)
    if q.group_by is not None or has_agg:
        if any(i.kind == "star" for i in q.items):
            raise ExecError("SELECT * cannot be combined with aggregates")
        gi = cols.resolve(q.group_by) if q.group_by is not None else None
        for item in q.items:
            if item.kind == "col" and (gi is None or cols.resolve(item.column) != gi):
                raise ExecError(f"column {item.column!r} must appear in GROUP BY")
        groups: dict[Any, list[tuple]] = {}
        if gi is None:
            groups[None] = rows
        else:
            for r in rows:
                groups.setdefault(r[gi], []).append(r)
        out = []
        for key in sorted(groups, key=lambda k: (k is None, k)) if gi is not None else groups:
            grp = groups[key]
            out.append(tuple(
                key if item.kind == "col" else
                _aggregate(item, [None] * len(grp) if item.column is None else [r[cols.resolve(item.column)] for r in grp])
                for item in q.items))
        labels = [i.label() for i in q.items]
        scalar = gi is None
    else:
        picks: list[int] = []
        labels = []
        for item in q.items:
            if item.kind == "star":
                picks.extend(range(len(cols.names)))
                labels.extend(c for _, c in cols.names)
            else:
                picks.append(cols.resolve(item.column))
                labels.append(item.label())
        out = [tuple(r[i] for i in picks) for r in rows]
        scalar = False

    if q.order_by is not None:
        if isinstance(q.order_by, int):
            if not 1 <= q.order_by <= len(labels):
                raise ExecError(f"ORDER BY position {q.order_by} out of range")
            oi = q.order_by - 1
        elif q.order_by in labels:
            oi = labels.index(q.order_by)
        else:
            oi = next((j for j, i in enumerate(q.items) if i.kind == "col" and i.column == q.order_by), None)
            if oi is None:
                raise ExecError(f"ORDER BY {q.order_by!r} is not a selected column")
        out.sort(key=lambda r: (r[oi] is None, r[oi]), reverse=q.descending)
    if q.limit is not None:
        out = out[:q.limit]
    return QueryOutput(labels, out, len(out), scalar)


def execute(engine: Engine, sql: str, base_dir: Path | None = None) -> QueryOutput:
    """Parse and run one statement against ``engine``.

    Relative source paths in COPY/MERGE resolve against ``base_dir``.
    """
    node = parse(sql)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if isinstance(node, Select):
        return _run_select(engine, node)
    if isinstance(node, CreateTable):
        engine.create_table(node.desc, node.if_not_exists)
        return QueryOutput([], [], 0)
    if isinstance(node, DropTable):
        engine.drop_table(node.table, node.if_exists)
        return QueryOutput([], [], 0)
    if isinstance(node, CopyInto):
        desc = engine.read_metadata(node.table).descriptor
        header, raw = _read_csv(engine, base / node.path)
        rows, ops = _project_source(desc, header, raw)
        if ops is not None and any(o == "D" for o in ops):
            raise SchemaMismatch("COPY source must not contain deletes")
        engine.load_append(node.table, rows)
        return QueryOutput([], [], len(rows))
    if isinstance(node, MergeInto):
        desc = engine.read_metadata(node.table).descriptor
        header, raw = _read_csv(engine, base / node.path)
        if node.row_range is not None:
            raw = raw[node.row_range[0]:node.row_range[1]]
        rows, ops = _project_source(desc, header, raw)
        k = desc.key_index
        upserts = [r for j, r in enumerate(rows) if ops is None or ops[j] != "D"]
        deletes = [r[k] for j, r in enumerate(rows) if ops is not None and ops[j] == "D"]
        engine.merge(node.table, upserts, deletes)
        return QueryOutput([], [], len(rows))
    if isinstance(node, DeleteKeys):
        desc = engine.read_metadata(node.table).descriptor
        if node.column != desc.key_column:
            raise ExecError(f"DELETE must filter on the key column {desc.key_column!r}")
        keys = [_typed(desc, node.column, v) for v in node.values]
        engine.merge(node.table, (), keys)
        return QueryOutput([], [], len(keys))
    if isinstance(node, Optimize):
        engine.optimize(node.table)
        return QueryOutput([], [], 0)
    if isinstance(node, Vacuum):
        engine.vacuum(node.table, node.retain)
        return QueryOutput([], [], 0)
    raise ParseError(f"unsupported statement {sql!r}")
