from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lsth.errors import EmptyTask, MissingVariable, TaskNotFound
from lsth.tasklib import (
    DEFAULT_LIBRARY,
    DialectKey,
    LstKind,
    StatementTemplate,
    resolve_task,
    substitute,
    task_names,
)

names = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,8}", fullmatch=True)
filler = st.text(st.characters(blacklist_characters="$"), max_size=10)


def test_shipped_tasks():
    assert task_names() == {"load", "single_user", "data_maintenance", "optimize", "vacuum", "time_travel"}


@pytest.mark.parametrize("lst,text", [
    (LstKind.DELTA_STYLE, "OPTIMIZE fact"),
    (LstKind.ICEBERG_STYLE, "CALL rewrite_data_files('fact')"),
    (LstKind.HUDI_STYLE, "CALL run_compaction('fact')"),
    (LstKind.GENERIC, "OPTIMIZE fact"),
])
def test_optimize_is_lst_specific(lst, text):
    tpl = resolve_task("optimize", DialectKey("minisql", lst))
    assert [s.raw_text for s in tpl.statements] == [text]


def test_generic_fallback():
    tpl = resolve_task("single_user", DialectKey("minisql", LstKind.HUDI_STYLE))
    assert tpl.source_path.endswith("generic")
    assert len(tpl.statements) == 8
    assert tpl.permutable


def test_statement_order_is_lexicographic_file_order():
    tpl = resolve_task("load")
    texts = [s.raw_text for s in tpl.statements]
    assert texts[0].startswith("DROP") and texts[-1].startswith("COPY")
    assert [t.split()[0] for t in texts] == ["DROP"] * 3 + ["CREATE"] * 3 + ["COPY"] * 3


def test_not_found():
    with pytest.raises(TaskNotFound):
        resolve_task("nonexistent")
    with pytest.raises(TaskNotFound):
        resolve_task("optimize", DialectKey("tsql", LstKind.DELTA_STYLE))


def test_empty_task(tmp_path):
    d = tmp_path / "blank" / "minisql" / "generic"
    d.mkdir(parents=True)
    (d / "01.sql").write_text("-- only a comment\n;\n")
    with pytest.raises(EmptyTask):
        resolve_task("blank", library_root=tmp_path)


def test_custom_library_with_lst_override(tmp_path):
    for lst, body in (("generic", "SELECT 1 FROM t"), ("iceberg", "SELECT 2 FROM t; SELECT 3 FROM t")):
        d = tmp_path / "q" / "minisql" / lst
        d.mkdir(parents=True)
        (d / "01.sql").write_text(body)
    assert len(resolve_task("q", DialectKey("minisql", LstKind.ICEBERG_STYLE), tmp_path).statements) == 2
    assert len(resolve_task("q", DialectKey("minisql", LstKind.DELTA_STYLE), tmp_path).statements) == 1
    # pure function of its inputs
    assert resolve_task("q", library_root=tmp_path) == resolve_task("q", library_root=tmp_path)


@pytest.mark.parametrize("text", ["delta", "DELTA_STYLE", " Iceberg ", "hudi", "generic"])
def test_lst_parse(text):
    assert isinstance(LstKind.parse(text), LstKind)


def test_lst_parse_unknown():
    with pytest.raises(ValueError):
        LstKind.parse("paimon")


def test_substitute_examples():
    assert substitute("SELECT count(*) FROM ${db}.fact", {"db": "main"}) == "SELECT count(*) FROM main.fact"
    assert substitute("... AS OF VERSION ${asof_version}", {"asof_version": "3"}) == "... AS OF VERSION 3"
    with pytest.raises(MissingVariable, match="x"):
        substitute(StatementTemplate("SELECT ${x}"), {})


@given(st.lists(st.tuples(filler, names), max_size=6), filler)
def test_variables_are_exactly_the_placeholders(parts, tail):
    text = "".join(f"{f}${{{n}}}" for f, n in parts) + tail
    assert StatementTemplate(text).variables == {n for _, n in parts}


@given(st.lists(st.tuples(filler, names), max_size=6), filler, st.text(st.characters(blacklist_characters="$"), max_size=5))
def test_substitute_leaves_no_placeholder_and_is_idempotent(parts, tail, value):
    text = "".join(f"{f}${{{n}}}" for f, n in parts) + tail
    bindings = {n: value for _, n in parts}
    once = substitute(text, bindings)
    assert "${" not in once
    assert substitute(once, bindings) == once


def test_library_root_is_packaged():
    assert (DEFAULT_LIBRARY / "single_user" / "PERMUTABLE").exists()
