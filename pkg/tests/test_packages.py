from __future__ import annotations

from collections import Counter

import pytest

from lsth.errors import ConfigError
from lsth.packages import PackageConfig, PackageId, build_package, required_refreshes
from lsth.workload import PhaseType


def _ids(spec):
    return [p.id for p in spec.phases]


def _tasks(spec):
    return Counter((t.task_name, tuple(sorted(t.params.items())))
                   for p in spec.phases for s in p.sessions for t in s.tasks)


def test_w0_shape():
    spec = build_package("W0", PackageConfig(streams=3))
    assert _ids(spec) == ["load", "su_1", "tp_1", "dm_1", "tp_2", "dm_2"]
    tp = [p for p in spec.phases if p.phase_type is PhaseType.THROUGHPUT]
    assert all([t.tasks[0].permutation_seed for t in p.sessions] == [0, 1, 2] for p in tp)


def test_w1_shape():
    spec = build_package("W1")
    assert _ids(spec) == ["load"] + [x for i in range(1, 6) for x in (f"su_{i}", f"dm_{i}")] + ["su_6"]
    assert len(spec.phases) == 12
    assert required_refreshes(spec) == 5


@pytest.mark.parametrize("k", [1, 2, 3])
def test_w2_iteration_i_has_i_refreshes(k):
    spec = build_package("W2", PackageConfig(iterations=k))
    by_id = {p.id: p for p in spec.phases}
    for i in range(1, k + 1):
        assert len(by_id[f"dm_{i}"].sessions[0].tasks) == i
        assert by_id[f"o_{i}"].phase_type is PhaseType.OPTIMIZE
    assert required_refreshes(spec) == k * (k + 1) // 2
    assert len(spec.phases) == 2 + 4 * k


def test_w3_pairs_every_write_with_a_reader():
    spec = build_package("W3", PackageConfig(iterations=1))
    for p in spec.phases:
        if p.phase_type in (PhaseType.DATA_MAINTENANCE, PhaseType.OPTIMIZE):
            assert len(p.sessions) == 2
            assert p.sessions[1].tasks[0].task_name == "single_user"


@pytest.mark.parametrize("k", [1, 3])
def test_w2_and_w3_write_the_same_tasks(k):
    cfg = PackageConfig(iterations=k)
    w2, w3 = _tasks(build_package("W2", cfg)), _tasks(build_package("W3", cfg))
    writes = lambda c: {t: n for t, n in c.items() if t[0] != "single_user"}
    assert writes(w2) == writes(w3)


def test_w3_multi_routes_targets():
    spec = build_package("W3_MULTI")
    for p in spec.phases:
        for s in p.sessions:
            reads = all(t.task_name == "single_user" for t in s.tasks)
            assert s.target == ("reader" if reads else "writer")


def test_w4_asof_mapping():
    spec = build_package("W4", PackageConfig(iterations=2))
    assert _ids(spec) == ["load", "dm_1", "dm_2", "tt_0", "tt_1", "tt_2"]
    asof = {p.id: p.sessions[0].tasks[0].params["asof_phase"] for p in spec.phases if p.id.startswith("tt_")}
    assert asof == {"tt_0": "load", "tt_1": "dm_1", "tt_2": "dm_2"}


@pytest.mark.parametrize("kwargs", [{"streams": 0}, {"iterations": 0}])
def test_config_rejects_non_positive(kwargs):
    with pytest.raises(ConfigError):
        PackageConfig(**kwargs)


def test_unknown_package():
    with pytest.raises(ValueError):
        build_package("W9")


@pytest.mark.parametrize("package", list(PackageId))
def test_refresh_streams_are_consecutive(package):
    spec = build_package(package)
    used = sorted(int(t.params["refresh"]) for p in spec.phases for s in p.sessions for t in s.tasks
                  if "refresh" in t.params)
    assert used == list(range(1, required_refreshes(spec) + 1))
