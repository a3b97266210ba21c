from __future__ import annotations

from pathlib import Path

import pytest

from lsth import datagen
from lsth.engine import ColumnType, Engine, Layout, TableDescriptor, WriteMode

FACT_COLUMNS = (
    ("key", ColumnType.INT64),
    ("dim1_fk", ColumnType.INT64),
    ("dim2_fk", ColumnType.INT64),
    ("amount", ColumnType.DECIMAL),
    ("event_date", ColumnType.DATE),
)

SMALL_COLUMNS = (("key", ColumnType.INT64), ("val", ColumnType.STRING))

LAYOUT_MODES = [(lay, mode) for lay in Layout for mode in WriteMode]
LAYOUT_MODE_IDS = [f"{lay.name}-{mode.name}" for lay, mode in LAYOUT_MODES]

# filled by tests/test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def fact_desc(layout: Layout, mode: WriteMode, target: int = 100, checkpoint: int = 10, name: str = "fact") -> TableDescriptor:
    return TableDescriptor(name, FACT_COLUMNS, layout, mode, "key", target, checkpoint)


def small_desc(layout: Layout, mode: WriteMode, target: int = 10, name: str = "t") -> TableDescriptor:
    return TableDescriptor(name, SMALL_COLUMNS, layout, mode, "key", target)


@pytest.fixture
def engine(tmp_path: Path) -> Engine:
    return Engine(tmp_path / "store")


@pytest.fixture(params=LAYOUT_MODES, ids=LAYOUT_MODE_IDS)
def layout_mode(request):
    return request.param


@pytest.fixture(scope="session")
def small_data(tmp_path_factory) -> Path:
    """Base tables plus 6 refreshes at 1000 fact rows."""
    out = tmp_path_factory.mktemp("data")
    datagen.generate_all(datagen.GenSpec(1000, 11, 0.1, 6), out)
    return out


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
