"""Deterministic synthetic star-schema data.

Randomness comes from SplitMix64 (Steele, Lea and Flood's 64-bit mixer),
used counter-style: every value stream is seeded by hashing
``(seed, tag, index...)`` through the mixer, so any row can be regenerated
on its own and output never depends on iteration order.

* ``bounded(n)`` draws a uniform integer in [0, n) by rejection sampling:
  raw 64-bit outputs at or above ``floor(2**64 / n) * n`` are discarded.
* ``shuffle`` is Fisher-Yates from the last index down, j = bounded(i + 1).

Fact keys are 1..scale_rows.  Refresh i (1-based) contains, in this order:
upserts of existing base keys (new amount, same foreign keys and date),
inserts of fresh keys following all keys used so far, and deletes (op ``D``)
of base keys that no earlier refresh deleted and this refresh does not
upsert.  Counts are ``round(fraction * rows)`` upserts,
``round(0.1 * upserts)`` inserts and ``round(0.05 * rows)`` deletes, where
round is half-up.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass
from decimal import Decimal
from pathlib import Path

from .errors import ConfigError, IOFailure

FORMAT_VERSION = 1
MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

FACT_COLUMNS = ["key", "dim1_fk", "dim2_fk", "amount", "event_date"]
REFRESH_COLUMNS = FACT_COLUMNS + ["op"]
DIM1_COLUMNS = ["id", "name", "category"]
DIM2_COLUMNS = ["id", "city", "region"]

_TAG_FACT, _TAG_DIM1, _TAG_DIM2, _TAG_REFRESH, _TAG_PICK, _TAG_NEW = range(1, 7)
_EPOCH = dt.date(2020, 1, 1)
_REGIONS = ["north", "south", "east", "west", "central"]


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK

    @classmethod
    def derive(cls, seed: int, *path: int) -> SplitMix64:
        s = mix64((seed + GOLDEN) & MASK)
        for x in path:
            s = mix64((s ^ mix64((x + GOLDEN) & MASK)) & MASK)
        return cls(s)

    def next64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK
        return mix64(self.state)

    def bounded(self, n: int) -> int:
        if n < 1:
            raise ValueError("bound must be >= 1")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> list:
        for i in range(len(items) - 1, 0, -1):
            j = self.bounded(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class GenSpec:
    scale_rows: int
    seed: int = 0
    refresh_fraction: float = 0.1
    refresh_count: int = 1

    def __post_init__(self) -> None:
        if self.scale_rows < 1:
            raise ConfigError("scale_rows must be >= 1")
        if not 0 < self.refresh_fraction <= 1:
            raise ConfigError("refresh_fraction must be in (0, 1]")
        if self.refresh_count < 0:
            raise ConfigError("refresh_count must be >= 0")

    @property
    def dim_rows(self) -> int:
        return max(1, math.ceil(self.scale_rows / 100))


def _amount(rng: SplitMix64) -> str:
    return str(Decimal(rng.bounded(100_000)).scaleb(-2).quantize(Decimal("0.01")))


def fact_row(spec: GenSpec, key: int) -> list[str]:
    rng = SplitMix64.derive(spec.seed, _TAG_FACT, key)
    d1 = 1 + rng.bounded(spec.dim_rows)
    d2 = 1 + rng.bounded(spec.dim_rows)
    amount = _amount(rng)
    day = _EPOCH + dt.timedelta(days=rng.bounded(1096))
    return [str(key), str(d1), str(d2), amount, day.isoformat()]


def _csv_bytes(header: list[str], rows: list[list[str]]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf)  # RFC-4180: CRLF line ends, minimal quoting
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _write(out_dir: Path, name: str, data: bytes, rows: int) -> dict:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_bytes(data)
    except OSError as exc:
        raise IOFailure(f"write {out_dir / name}: {exc}") from exc
    return {"name": name, "rows": rows, "sha256": hashlib.sha256(data).hexdigest()}


def _manifest(spec: GenSpec, files: list[dict]) -> dict:
    return {"format_version": FORMAT_VERSION, "spec": asdict(spec), "files": files}


def base_tables(spec: GenSpec) -> dict[str, tuple[list[str], list[list[str]]]]:
    dim1, dim2 = [], []
    for i in range(1, spec.dim_rows + 1):
        r1 = SplitMix64.derive(spec.seed, _TAG_DIM1, i)
        dim1.append([str(i), f"name_{i:05d}", f"cat_{r1.bounded(10):02d}"])
        r2 = SplitMix64.derive(spec.seed, _TAG_DIM2, i)
        dim2.append([str(i), f"city_{i:05d}", _REGIONS[r2.bounded(len(_REGIONS))]])
    fact = [fact_row(spec, k) for k in range(1, spec.scale_rows + 1)]
    return {"fact.csv": (FACT_COLUMNS, fact), "dim1.csv": (DIM1_COLUMNS, dim1), "dim2.csv": (DIM2_COLUMNS, dim2)}


def generate_base(spec: GenSpec, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    files = [_write(out, name, _csv_bytes(h, rows), len(rows)) for name, (h, rows) in base_tables(spec).items()]
    return _manifest(spec, files)


@dataclass(frozen=True)
class RefreshPlan:
    upserts: tuple[int, ...]
    inserts: tuple[int, ...]
    deletes: tuple[int, ...]


def refresh_plans(spec: GenSpec, upto: int) -> list[RefreshPlan]:
    """Key choices of refreshes 1..upto; each depends on all earlier ones."""
    plans = []
    deleted: set[int] = set()
    next_key = spec.scale_rows + 1
    n_up = round_half_up(spec.refresh_fraction * spec.scale_rows)
    n_ins = round_half_up(0.1 * n_up)
    n_del = round_half_up(0.05 * spec.scale_rows)
    for i in range(1, upto + 1):
        rng = SplitMix64.derive(spec.seed, _TAG_PICK, i)
        alive = rng.shuffle([k for k in range(1, spec.scale_rows + 1) if k not in deleted])
        ups = sorted(alive[:n_up])
        dels = sorted(alive[n_up:n_up + n_del])
        ins = tuple(range(next_key, next_key + n_ins))
        next_key += n_ins
        deleted.update(dels)
        plans.append(RefreshPlan(tuple(ups), ins, tuple(dels)))
    return plans


def refresh_rows(spec: GenSpec, i: int) -> list[list[str]]:
    if not 1 <= i <= spec.refresh_count:
        raise ConfigError(f"refresh index {i} outside 1..{spec.refresh_count}")
    plan = refresh_plans(spec, i)[-1]
    rows = []
    for k in plan.upserts:
        row = fact_row(spec, k)
        row[3] = _amount(SplitMix64.derive(spec.seed, _TAG_REFRESH, i, k))
        rows.append(row + ["U"])
    for k in plan.inserts:
        rng = SplitMix64.derive(spec.seed, _TAG_NEW, k)
        row = fact_row(spec, k)
        row[3] = _amount(rng)
        rows.append(row + ["U"])
    for k in plan.deletes:
        rows.append(fact_row(spec, k) + ["D"])
    return rows


def generate_refresh(spec: GenSpec, i: int, out_dir: str | Path) -> dict:
    rows = refresh_rows(spec, i)
    return _manifest(spec, [_write(Path(out_dir), f"refresh_{i}.csv", _csv_bytes(REFRESH_COLUMNS, rows), len(rows))])


def generate_all(spec: GenSpec, out_dir: str | Path) -> dict:
    """Base files, every refresh, and ``manifest.json`` describing them all."""
    out = Path(out_dir)
    files = generate_base(spec, out)["files"]
    for i in range(1, spec.refresh_count + 1):
        files += generate_refresh(spec, i, out)["files"]
    manifest = _manifest(spec, files)
    _write(out, "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode(), 0)
    return manifest
