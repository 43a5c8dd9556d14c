"""Command-line front end.

Subcommands
-----------
``simulate``       run one experiment and write records.csv, summary.json
                   and manifest.json
``sweep``          rerun an experiment along one axis (lambda, n or m) and
                   write sweep.csv plus a gnuplot script
``select-lambda``  write the per-repeat lambda feasibility table

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import jsonschema

from . import __version__
from .align import AlignmentConfig, LambdaSelectionConfig, select_lambda
from .exceptions import ConfigError, StcpError
from .simlab import (
    FAMILIES,
    METHODS,
    SCORE_TYPES,
    ExperimentConfig,
    RepeatRecord,
    SyntheticSetting,
    aggregate,
    prepare_repeat,
    run_experiment,
)

__all__ = [
    "CONFIG_SCHEMA",
    "RunManifest",
    "load_config",
    "config_digest",
    "records_to_csv",
    "records_from_csv",
    "summary_to_json",
    "cmd_simulate",
    "cmd_sweep",
    "cmd_select_lambda",
    "main",
]

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SWEEP_AXES = ("lambda", "n", "m")

_pos_int = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "setting": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": list(FAMILIES)},
                "d": _pos_int,
                "gamma_s": {"type": "number", "exclusiveMinimum": 0},
                "gamma_t": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "n": _pos_int,
        "m": _pos_int,
        "N": _pos_int,
        "n_test": _pos_int,
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "alpha_tol": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "lambda_grid": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "repeats": _pos_int,
        "base_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "score_type": {"enum": list(SCORE_TYPES)},
        "methods": {"type": "array", "minItems": 1, "uniqueItems": True,
                    "items": {"enum": list(METHODS)}},
        "oracle_extra": _pos_int,
        "stcp_lambda": {"type": "number", "minimum": 0},
        "grid_size": {"type": "integer", "minimum": 2},
        "theta_loc_shift": {"type": "number"},
    },
}


@dataclasses.dataclass
class RunManifest:
    config_digest: str
    tool_version: str
    base_seed: int
    started_at: str
    finished_at: str
    output_paths: list

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2) + "\n"


# ---------------------------------------------------------------------------
# config


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def parse_config(data) -> ExperimentConfig:
    """Validate a decoded JSON object and build an :class:`ExperimentConfig`."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))
    data = dict(data)
    setting = SyntheticSetting(**data.pop("setting", {}))
    grid = [float(v) for v in data.get("lambda_grid", ExperimentConfig.lambda_grid)]
    try:
        LambdaSelectionConfig(tuple(grid), data.get("alpha_tol", ExperimentConfig.alpha_tol))
    except ValueError as exc:
        raise ConfigError(str(exc), "/lambda_grid") from exc
    if "methods" in data:
        data["methods"] = tuple(data["methods"])
    try:
        return ExperimentConfig(setting=setting, **data)
    except ValueError as exc:
        raise ConfigError(str(exc), "") from exc


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "") from exc
    if seed is not None:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", "")
        data = {**data, "base_seed": seed}
    return parse_config(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["methods"] = list(cfg.methods)
    out["lambda_grid"] = list(cfg.lambda_grid)
    return out


def config_digest(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# serialization


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _parse_num(text: str):
    return None if text == "" else float(text)


RECORD_COLUMNS = ("repeat_index", "method", "lambda_used", "q_hat", "marginal_coverage",
                  "mean_size", "miscoverage", "converged")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def records_to_csv(records, path) -> None:
    _write_csv(Path(path), RECORD_COLUMNS, (
        [r.repeat_index, r.method, _num(r.lambda_used), _num(r.q_hat), _num(r.marginal_coverage),
         _num(r.mean_size), _num(r.miscoverage), _num(r.converged)]
        for r in records))


def records_from_csv(path) -> list:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            conv = row["converged"]
            out.append(RepeatRecord(
                repeat_index=int(row["repeat_index"]),
                method=row["method"],
                lambda_used=_parse_num(row["lambda_used"]),
                q_hat=float(row["q_hat"]),
                marginal_coverage=float(row["marginal_coverage"]),
                mean_size=float(row["mean_size"]),
                miscoverage=float(row["miscoverage"]),
                converged=None if conv == "" else conv == "true",
            ))
    return out


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def summary_to_json(aggregates: dict, cfg: ExperimentConfig) -> str:
    """Aggregates as JSON; non-finite numbers become ``null`` and are listed
    under ``<field>_nonfinite`` with their original value as a string."""
    methods = {}
    for name, summ in aggregates.items():
        entry = {}
        for key, value in dataclasses.asdict(summ).items():
            entry[key] = _json_value(value)
            if isinstance(value, float) and not math.isfinite(value):
                entry[f"{key}_nonfinite"] = _num(value) if not math.isnan(value) else "nan"
        methods[name] = entry
    doc = {"config_digest": config_digest(cfg), "repeats": cfg.repeats, "methods": methods}
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("STCP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"STCP_THREADS must be an integer, got {env!r}", "") from exc
    return 1


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(config_path, out_dir, seed=None, threads=None) -> int:
    def run():
        cfg = load_config(config_path, seed)
        n_threads = _threads(threads)
        started = _now()
        report = run_experiment(cfg, n_threads)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "records.csv", out / "summary.json", out / "manifest.json"]
        records_to_csv(report.records, paths[0])
        paths[1].write_text(summary_to_json(report.aggregates, cfg), encoding="utf-8")
        manifest = RunManifest(config_digest(cfg), __version__, cfg.base_seed, started, _now(),
                               [str(p) for p in paths])
        paths[2].write_text(manifest.to_json(), encoding="utf-8")

    return _guard(run)


def _parse_values(values) -> list:
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    try:
        vals = [float(v) for v in values]
    except ValueError as exc:
        raise ConfigError(f"sweep values must be numbers: {exc}", "/values") from exc
    if not vals:
        raise ConfigError("sweep needs at least one value", "/values")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("sweep values must be strictly ascending", "/values")
    return vals


def _swept(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "lambda":
        if value < 0:
            raise ConfigError("lambda values must be nonnegative", "/values")
        return dataclasses.replace(cfg, stcp_lambda=float(value))
    if value != int(value) or value < 1:
        raise ConfigError(f"{axis} values must be positive integers", "/values")
    return dataclasses.replace(cfg, **{axis: int(value)})


_GNUPLOT = """# gnuplot script for sweep.csv
set datafile separator ","
set key autotitle columnhead
set xlabel "{axis}"
set ylabel "Std of mean set size"
{logscale}plot for [M in "{methods}"] "sweep.csv" using 1:(strcol(2) eq M ? $3 : NaN) with linespoints title M
"""


def cmd_sweep(config_path, axis, values, out_dir, seed=None, threads=None) -> int:
    def run():
        if axis not in SWEEP_AXES:
            raise ConfigError(f"axis must be one of {SWEEP_AXES}", "/axis")
        cfg = load_config(config_path, seed)
        vals = _parse_values(values)
        configs = [_swept(cfg, axis, v) for v in vals]
        n_threads = _threads(threads)
        rows = []
        for v, c in zip(vals, configs):
            report = run_experiment(c, n_threads)
            for method in c.methods:
                a = report.aggregates[method]
                rows.append([_num(v), method, _num(a.std_of_mean_size), _num(a.mean_marginal),
                             _num(a.mean_size), _num(a.mean_miscoverage)])
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "sweep.csv", ("axis_value", "method", "std", "marginal", "size", "miscoverage"), rows)
        logscale = "set logscale x\n" if axis == "lambda" and all(v > 0 for v in vals) else ""
        (out / "sweep.gp").write_text(
            _GNUPLOT.format(axis=axis, methods=" ".join(cfg.methods), logscale=logscale), encoding="utf-8")

    return _guard(run)


def selection_rows(cfg: ExperimentConfig) -> list:
    """Rows ``[repeat, lambda, q_st, feasible, chosen]`` for every repeat."""
    sel_cfg = LambdaSelectionConfig(cfg.lambda_grid, cfg.alpha_tol)
    align_cfg = AlignmentConfig(grid_size=cfg.grid_size)
    rows = []
    for r in range(cfg.repeats):
        ctx = prepare_repeat(cfg, r, need_theta=True)
        try:
            sel = select_lambda(ctx.theta_hat, sel_cfg, ctx.levels, ctx.scores,
                                ctx.bundle.x_unlabeled, align_cfg)
        except StcpError as exc:
            raise type(exc)(f"repeat {r}: {exc}") from exc
        for row in sel.table:
            rows.append([r, _num(row["lambda"]), _num(row["q_st"]), _num(row["feasible"]),
                         _num(row["lambda"] == sel.lambda_hat)])
    return rows


def cmd_select_lambda(config_path, out_dir, seed=None, threads=None) -> int:
    def run():
        cfg = load_config(config_path, seed)
        _threads(threads)
        rows = selection_rows(cfg)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "lambda_selection.csv", ("repeat", "lambda", "q_st", "feasible", "chosen"), rows)

    return _guard(run)


def _guard(fn) -> int:
    try:
        fn()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StcpError, ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stcp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: $STCP_THREADS or 1)")

    common(sub.add_parser("simulate", help="run one experiment"))
    sw = sub.add_parser("sweep", help="sweep lambda, n or m")
    common(sw)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma-separated ascending values")
    common(sub.add_parser("select-lambda", help="per-repeat lambda feasibility table"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.seed, args.threads)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.axis, args.values, args.out, args.seed, args.threads)
    return cmd_select_lambda(args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
