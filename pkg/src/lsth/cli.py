"""``lsth`` command line: validate, datagen, run, report.

Exit codes: 0 success, 1 invalid input (workload, targets, flags),
2 execution failure (unreachable target, aborted run, I/O error).
"""

from __future__ import annotations

import argparse
import datetime as dt
import os
import sys
from pathlib import Path

import yaml

from . import datagen, metrics, telemetry
from .connector import ConnectionSpec
from .errors import ConfigError, DocumentSyntaxError, IOFailure, LsthError, TargetUnreachable, ValidationError
from .executor import ExperimentConfig, FailurePolicy, run_experiment
from .packages import PackageConfig, PackageId, build_package
from .workload import WorkloadSpec, max_concurrency, parse_workload, serialize_workload

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2
_PATH_KEYS = ("data_dir", "base_dir")


def _err(msg: str) -> None:
    print(f"lsth: {msg}", file=sys.stderr)


def _load_spec(args) -> WorkloadSpec:
    if args.package:
        return build_package(args.package, PackageConfig(streams=args.streams, iterations=args.iterations))
    if not args.workload:
        raise ConfigError("one of -w/--workload or --package is required")
    try:
        text = Path(args.workload).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read workload {args.workload}: {exc}") from None
    return parse_workload(text)


def describe(spec: WorkloadSpec) -> str:
    lines = [f"workload {spec.id}: {len(spec.phases)} phases, max concurrency {max_concurrency(spec)}"]
    for i, p in enumerate(spec.phases, 1):
        sessions = "; ".join(
            f"{s.target}: " + ", ".join(t.label for t in s.tasks) for s in p.sessions)
        lines.append(f"  {i:>3}. {p.id} [{p.phase_type.value}] x{len(p.sessions)}  {sessions}")
    return "\n".join(lines)


def _resolve(base: Path, value: str) -> str:
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


def load_targets(path: str | Path, overrides: dict[str, str]) -> ExperimentConfig:
    """Parse a targets YAML file into an ExperimentConfig.

    Relative ``storage_root`` and ``data_dir``/``base_dir`` values resolve
    against the file's directory.
    """
    p = Path(path)
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read targets {p}: {exc}") from None
    except yaml.YAMLError as exc:
        raise DocumentSyntaxError(f"malformed targets file: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("targets"), dict):
        raise ConfigError("targets file needs a 'targets' mapping")
    unknown = set(doc) - {"targets", "globals", "failure_policy", "repetitions", "experiment_id"}
    if unknown:
        raise ConfigError(f"targets file: unknown keys {sorted(unknown)}")
    base = p.parent.resolve()
    targets = {}
    for name, raw in doc["targets"].items():
        if not isinstance(raw, dict):
            raise ConfigError(f"target {name!r} must be a mapping")
        raw = dict(raw)
        if raw.get("storage_root") is not None:
            raw["storage_root"] = _resolve(base, str(raw["storage_root"]))
        opts = {str(k): str(v) for k, v in (raw.get("options") or {}).items()}
        for k in _PATH_KEYS:
            if k in opts:
                opts[k] = _resolve(base, opts[k])
        raw["options"] = opts
        targets[str(name)] = ConnectionSpec.from_dict(raw)
    globals_ = {str(k): str(v) for k, v in (doc.get("globals") or {}).items()}
    for k in _PATH_KEYS:
        if k in globals_:
            globals_[k] = _resolve(base, globals_[k])
    globals_.update(overrides)
    try:
        policy = FailurePolicy(str(doc.get("failure_policy", "ABORT_EXPERIMENT")).upper())
    except ValueError:
        raise ConfigError(f"unknown failure_policy {doc.get('failure_policy')!r}") from None
    exp_id = str(doc.get("experiment_id") or f"exp-{dt.datetime.now(dt.timezone.utc):%Y%m%dT%H%M%SZ}")
    return ExperimentConfig(exp_id, targets, globals_, policy, int(doc.get("repetitions", 1)))


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def cmd_validate(args) -> int:
    spec = _load_spec(args)
    print(describe(spec))
    return EXIT_OK


def cmd_datagen(args) -> int:
    spec = datagen.GenSpec(args.rows, args.seed, args.fraction, args.refreshes)
    manifest = datagen.generate_all(spec, args.output)
    for f in manifest["files"]:
        print(f"{f['name']}: {f['rows']} rows")
    return EXIT_OK


def cmd_run(args) -> int:
    spec = _load_spec(args)
    cfg = load_targets(args.targets, _overrides(args.set))
    if args.experiment_id:
        cfg.experiment_id = args.experiment_id
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    # the materialized workload makes the run reproducible from its artifacts
    (out / "workload.yaml").write_text(serialize_workload(spec), encoding="utf-8")
    sink = telemetry.TelemetrySink(out)
    result = run_experiment(spec, cfg, sink)
    print(f"experiment {cfg.experiment_id}: {len(result.phases)} phases, {result.failures} failed statements")
    if result.aborted:
        _err("run aborted after a statement failure; later statements were skipped")
        return EXIT_FAILED
    return EXIT_OK


def cmd_report(args) -> int:
    per_input = {}
    all_aggs, all_series = [], []
    for n, d in enumerate(args.input, 1):
        label = str(d) if str(d) not in per_input else f"{d} (#{n})"
        loaded = telemetry.load(d, strict=not args.lenient)
        for diag in loaded.diagnostics:
            _err(f"skipped malformed line {diag}")
        series = metrics.series_by_phase_type(loaded.events)
        all_aggs += metrics.aggregate_all(loaded.events)
        all_series += series
        per_input[label] = metrics.sdr_table(series)
    if len(per_input) == 1:
        rows = next(iter(per_input.values()))
        metrics.emit_report(all_aggs, all_series, rows, args.output)
    else:
        metrics.emit_report(all_aggs, all_series, metrics.combine_sdr(per_input), args.output, per_input)
    print(f"report written to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsth", description="Benchmark harness for log-structured tables.")
    sub = parser.add_subparsers(dest="command", required=True)
    default_out = os.environ.get("LSTH_OUTPUT_DIR")

    def workload_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("-w", "--workload", help="workload YAML file")
        p.add_argument("--package", choices=[x.value for x in PackageId], help="built-in package instead of -w")
        p.add_argument("--streams", type=int, default=2, help="throughput streams for packages (default 2)")
        p.add_argument("--iterations", type=int, default=3, help="DM iterations k for W2-W4 (default 3)")

    p = sub.add_parser("validate", help="parse a workload and print its phase plan")
    workload_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("datagen", help="generate base and refresh CSV files")
    p.add_argument("-o", "--output", default=default_out, required=default_out is None)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--refreshes", type=int, default=1)
    p.add_argument("--fraction", type=float, default=0.1, help="fraction of keys upserted per refresh")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("run", help="execute a workload and record telemetry")
    workload_flags(p)
    p.add_argument("-t", "--targets", required=True, help="targets YAML file")
    p.add_argument("-o", "--output", default=default_out, required=default_out is None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="global variable binding (repeatable)")
    p.add_argument("--experiment-id")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="compute metrics from recorded telemetry")
    p.add_argument("-i", "--input", nargs="+", required=True, help="run output directories")
    p.add_argument("-o", "--output", default=default_out, required=default_out is None)
    p.add_argument("--lenient", action="store_true", help="skip malformed telemetry lines")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except (ValidationError, DocumentSyntaxError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    except (TargetUnreachable, IOFailure) as exc:
        _err(str(exc))
        return EXIT_FAILED
    except LsthError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_INVALID if args.command in ("validate", "report") else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
