"""Per-phase aggregates, the degradation rate, and report files.

The degradation rate of a series M_0..M_n is the mean relative change
between consecutive iterations, ``(1/n) * sum((M_i - M_{i-1}) / M_{i-1})``.
Higher-is-better metrics are first mapped to their reciprocals so that a
positive rate always means "getting worse".  Sums are taken over exact
fractions and rounded once at the end.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .engine.counters import COUNTER_FIELDS, StorageCounters
from .errors import DivisionByZero, InsufficientData, IOFailure, UnknownPhase
from .telemetry import EventRecord, Level, Status

NA = "n/a"
COMBINED = "combined (mean)"


class Direction(str, Enum):
    LOWER_BETTER = "LOWER_BETTER"
    HIGHER_BETTER = "HIGHER_BETTER"


@dataclass
class MetricSeries:
    phase_type: str
    metric_name: str
    values: list
    direction: Direction = Direction.LOWER_BETTER
    phase_ids: list[str] = field(default_factory=list)


@dataclass
class PhaseAggregate:
    phase_id: str
    phase_type: str
    statement_time_s: float
    phase_span_s: float
    counters: StorageCounters
    statement_failures: int
    statements: int

    @property
    def throughput(self) -> float:
        """Successful statements per second of phase span (not QphDS)."""
        ok = self.statements - self.statement_failures
        return ok / self.phase_span_s if self.phase_span_s > 0 else 0.0


def fmt(x) -> str:
    if x is None:
        return NA
    return f"{float(x):.6g}"


def _exact(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, Decimal)):
        return Fraction(v)
    return Fraction(float(v))


def degradation_rate(series: MetricSeries | Sequence, direction: Direction = Direction.LOWER_BETTER) -> float:
    if isinstance(series, MetricSeries):
        values, direction = series.values, series.direction
    else:
        values = series
    if len(values) < 2:
        raise InsufficientData(f"degradation rate needs >= 2 values, got {len(values)}")
    vals = [_exact(v) for v in values]
    if direction is Direction.HIGHER_BETTER:
        if any(v == 0 for v in vals):
            raise DivisionByZero("reciprocal of a zero metric value")
        vals = [1 / v for v in vals]
    total = Fraction(0)
    for prev, cur in zip(vals, vals[1:]):
        if prev == 0:
            raise DivisionByZero("relative change from a zero metric value")
        total += (cur - prev) / prev
    return float(total / (len(vals) - 1))


def _statement_events(events: Iterable[EventRecord]) -> list[EventRecord]:
    return [e for e in events if e.level is Level.STATEMENT]


def phase_order(events: Iterable[EventRecord]) -> list[tuple[str, str]]:
    """(phase_id, phase_type) in order of first occurrence."""
    first: dict[str, tuple[int, int, str]] = {}
    for n, e in enumerate(events):
        if e.level is Level.EXPERIMENT or not e.phase_id:
            continue
        key = (e.start_ns, n, e.phase_type)
        if e.phase_id not in first or key < first[e.phase_id]:
            first[e.phase_id] = key
    return [(pid, v[2]) for pid, v in sorted(first.items(), key=lambda kv: kv[1][:2])]


def aggregate_phase(events: Sequence[EventRecord], phase_id: str) -> PhaseAggregate:
    mine = [e for e in events if e.phase_id == phase_id and e.level is not Level.EXPERIMENT]
    if not mine:
        raise UnknownPhase(f"no events for phase {phase_id!r}")
    stmts = _statement_events(mine)
    total = StorageCounters()
    for e in stmts:
        total = total + e.counters
    if stmts:
        span_ns = max(e.end_ns for e in stmts) - min(e.start_ns for e in stmts)
    else:
        span_ns = max((e.duration_ns for e in mine), default=0)
    return PhaseAggregate(
        phase_id,
        mine[0].phase_type,
        sum(e.duration_ns for e in stmts) / 1e9,
        span_ns / 1e9,
        total,
        sum(1 for e in stmts if e.status is Status.FAILURE),
        sum(1 for e in stmts if e.status is not Status.SKIPPED),
    )


def aggregate_all(events: Sequence[EventRecord]) -> list[PhaseAggregate]:
    return [aggregate_phase(events, pid) for pid, _ in phase_order(events)]


METRICS: dict[str, tuple[Direction, callable]] = {
    "latency_s": (Direction.LOWER_BETTER, lambda a: a.statement_time_s),
    "phase_span_s": (Direction.LOWER_BETTER, lambda a: a.phase_span_s),
    **{f: (Direction.LOWER_BETTER, (lambda name: lambda a: getattr(a.counters, name))(f)) for f in COUNTER_FIELDS},
    "throughput_sps": (Direction.HIGHER_BETTER, lambda a: a.throughput),
}


def series_by_phase_type(events: Sequence[EventRecord], metrics: Iterable[str] | None = None) -> list[MetricSeries]:
    aggs = aggregate_all(events)
    names = list(metrics) if metrics is not None else list(METRICS)
    by_type: dict[str, list[PhaseAggregate]] = {}
    for a in aggs:
        by_type.setdefault(a.phase_type, []).append(a)
    out = []
    for ptype, group in by_type.items():
        for name in names:
            direction, get = METRICS[name]
            out.append(MetricSeries(ptype, name, [get(a) for a in group], direction, [a.phase_id for a in group]))
    return out


@dataclass
class SdrRow:
    phase_type: str
    metric: str
    n: int
    sdr: float | None
    note: str = ""


def sdr_table(series: Iterable[MetricSeries]) -> list[SdrRow]:
    rows = []
    for s in series:
        n = len(s.values) - 1
        if n < 1:
            rows.append(SdrRow(s.phase_type, s.metric_name, max(n, 0), None, "single sample"))
            continue
        try:
            rows.append(SdrRow(s.phase_type, s.metric_name, n, degradation_rate(s)))
        except DivisionByZero:
            rows.append(SdrRow(s.phase_type, s.metric_name, n, None, "zero value"))
    return rows


def combine_sdr(tables: dict[str, list[SdrRow]]) -> list[SdrRow]:
    """Plain mean of the defined per-workload values of each (phase type, metric)."""
    acc: dict[tuple[str, str], list[SdrRow]] = {}
    for rows in tables.values():
        for r in rows:
            acc.setdefault((r.phase_type, r.metric), []).append(r)
    out = []
    for (ptype, metric), rows in acc.items():
        defined = [r.sdr for r in rows if r.sdr is not None]
        mean = sum(defined) / len(defined) if defined else None
        out.append(SdrRow(ptype, metric, sum(r.n for r in rows), mean, f"{COMBINED} of {len(defined)}"))
    return out


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


def _grid(rows: list[SdrRow]) -> list[str]:
    metrics = list(dict.fromkeys(r.metric for r in rows))
    ptypes = list(dict.fromkeys(r.phase_type for r in rows))
    cell = {(r.phase_type, r.metric): r for r in rows}
    lines = ["| phase type | " + " | ".join(metrics) + " |", "|---|" + "---|" * len(metrics)]
    for p in ptypes:
        lines.append(f"| {p} | " + " | ".join(fmt(cell[(p, m)].sdr) if (p, m) in cell else "" for m in metrics) + " |")
    return lines


def emit_report(aggregates: Sequence[PhaseAggregate], series: Sequence[MetricSeries], sdr_rows: Sequence[SdrRow],
                out_dir: str | Path, per_input: dict[str, list[SdrRow]] | None = None) -> list[Path]:
    """Write report.md, report.csv and plotdata/*.csv; returns the written paths.

    With ``per_input`` (several experiments) the markdown also lists each
    experiment's grid and ``sdr_rows`` is expected to be the combined mean.
    """
    out = Path(out_dir)
    written: list[Path] = []
    try:
        (out / "plotdata").mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["phase_type", "metric", "n", "sdr"])
            for r in sdr_rows:
                w.writerow([r.phase_type, r.metric, r.n, fmt(r.sdr)])
        written.append(out / "report.csv")

        for s in series:
            path = out / "plotdata" / f"{_slug(s.phase_type)}__{_slug(s.metric_name)}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "phase_id", "value"])
                for i, v in enumerate(s.values):
                    w.writerow([i, s.phase_ids[i] if i < len(s.phase_ids) else "", fmt(v)])
            written.append(path)

        md = ["# Benchmark report", "", "## Phases", ""]
        md.append("| phase | type | statements | failures | statement_time_s | phase_span_s | throughput_sps | "
                  + " | ".join(COUNTER_FIELDS) + " |")
        md.append("|---|---|---|---|---|---|---|" + "---|" * len(COUNTER_FIELDS))
        for a in aggregates:
            md.append(f"| {a.phase_id} | {a.phase_type} | {a.statements} | {a.statement_failures} | "
                      f"{fmt(a.statement_time_s)} | {fmt(a.phase_span_s)} | {fmt(a.throughput)} | "
                      + " | ".join(fmt(getattr(a.counters, f)) for f in COUNTER_FIELDS) + " |")
        md += ["", "## Degradation rate (S_DR)", "",
               "Mean relative change between consecutive iterations of a phase type; "
               "positive means degrading.  Latency uses statement_time.  "
               f"`{NA}` marks series with a single iteration.", ""]
        if per_input:
            for label, rows in per_input.items():
                md += [f"### {label}", ""] + _grid(rows) + [""]
            md += [f"### {COMBINED}", ""]
        md += _grid(list(sdr_rows)) if sdr_rows else ["(no series)"]
        md.append("")
        (out / "report.md").write_text("\n".join(md), encoding="utf-8")
        written.append(out / "report.md")
    except OSError as exc:
        raise IOFailure(f"writing report to {out}: {exc}") from exc
    return written


def report_from_events(events: Sequence[EventRecord], out_dir: str | Path) -> list[Path]:
    aggs = aggregate_all(events)
    series = series_by_phase_type(events)
    return emit_report(aggs, series, sdr_table(series), out_dir)
