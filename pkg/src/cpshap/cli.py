"""Command-line surface: `cpshap attribute | benchmark | report`.

Every flag can also be supplied through a plain ``key=value`` config file
(`--config`); explicit command-line flags win.  Outputs are plain JSON
and CSV written with fixed key ordering and float formatting, so a rerun
with identical inputs is byte-identical — including under different
``CPSHAP_THREADS`` settings.

Exit codes: 0 success, 2 configuration problems, 3 data problems,
4 numeric failures (the offending test points are named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import (
    AttributionConfig,
    AttributionResult,
    agreement_from_matrices,
    attribute_exact,
    attribute_mc,
    derive_seeds,
    modal_ranks,
    rank_matrix_from_values,
)
from .conformal import split
from .dataio import load_csv
from .exceptions import (
    CPShapError,
    DataFormatError,
    DegenerateBaselineError,
    DegenerateWeightsError,
    DimensionError,
    EmptyDataError,
    IncompleteDividendsError,
    InsufficientCalibrationError,
    ParameterError,
    SplitError,
    SupportMismatchError,
)
from .regressors import RegressorSpec
from .synthbench import convergence_summary, run_friedman_comparison, run_sobol_convergence

__all__ = ["main", "SCHEMA_VERSION", "allocations_document"]

SCHEMA_VERSION = "1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_ERRORS = (ParameterError, SplitError, InsufficientCalibrationError)
_DATA_ERRORS = (DataFormatError, EmptyDataError, DimensionError)
_NUMERIC_ERRORS = (
    DegenerateBaselineError,
    DegenerateWeightsError,
    IncompleteDividendsError,
    SupportMismatchError,
)

_REGRESSOR_CHOICES = {
    "constant": RegressorSpec.constant,
    "linear": RegressorSpec.linear,
    "knn": RegressorSpec.knn,
    "tree": RegressorSpec.tree,
}


# ---------------------------------------------------------------------------
# Flag tables (shared between argparse and config files)


def _comma_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in str(text).split(",") if p.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _comma_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in str(text).split(",") if p.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _comma_strings(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in str(text).split(",") if p.strip() != "")


class _Flag:
    def __init__(self, name, type=str, default=None, choices=None, help="", required=False):
        self.name = name  # long flag, e.g. "cqr-levels"
        self.dest = name.replace("-", "_")
        self.type = type
        self.default = default
        self.choices = choices
        self.help = help
        self.required = required

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument(
            f"--{self.name}",
            dest=self.dest,
            type=self.type,
            default=self.default,
            choices=self.choices,
            help=self.help,
            required=self.required,
        )

    def to_text(self, value) -> str:
        if isinstance(value, (tuple, list)):
            return ",".join(str(v) for v in value)
        return str(value)


_COMMON_FLAGS = [
    _Flag("out-dir", type=str, default=".", help="directory for output files"),
    _Flag("config", type=str, default="", help="key=value file supplying flag defaults"),
]

_ATTRIBUTE_FLAGS = [
    _Flag("data", type=str, required=True, help="input CSV with a header row"),
    _Flag("target", type=str, required=True, help="name of the label column"),
    _Flag("categoricals", type=_comma_strings, default=(),
          help="comma-separated feature columns to one-hot expand"),
    _Flag("method", type=str, default="smr", choices=("smr", "lacp", "cqr"),
          help="conformal interval construction"),
    _Flag("value", type=str, default="width", choices=("width", "lower", "upper"),
          help="interval property to attribute"),
    _Flag("alloc", type=str, default="shap", choices=("shap", "pshap", "both"),
          help="allocation kind(s)"),
    _Flag("estimator", type=str, default="exact", choices=("exact", "mc", "is"),
          help="exact enumeration, direct sampling, or importance sampling"),
    _Flag("m", type=int, default=500, help="sampled permutations per run"),
    _Flag("alpha", type=float, default=0.1, help="miscoverage level"),
    _Flag("cqr-levels", type=_comma_floats, default=(),
          help="low,high quantile levels for cqr (default alpha/2, 1-alpha/2)"),
    _Flag("regressor", type=str, default="linear", choices=tuple(_REGRESSOR_CHOICES),
          help="regression family for the coalition models"),
    _Flag("dispersion-transform", type=str, default="abs", choices=("abs", "sq"),
          help="lacp dispersion target: absolute or squared residuals"),
    _Flag("split", type=_comma_floats, default=(0.6, 0.2),
          help="train,calibration fractions; the remainder is attributed"),
    _Flag("seed", type=int, default=0, help="root seed for split/training/sampling"),
] + _COMMON_FLAGS

_BENCHMARK_FLAGS = [
    _Flag("m-grid", type=_comma_ints, default=(50, 100, 200, 400),
          help="permutation counts for the convergence benchmark"),
    _Flag("reps", type=int, default=30, help="repetitions per permutation count"),
    _Flag("seed", type=int, default=0, help="root seed"),
    _Flag("n-train", type=int, default=2000, help="training rows"),
    _Flag("n-cal", type=int, default=1000, help="calibration rows"),
    _Flag("n-test", type=int, default=0, help="test rows (0 = benchmark default)"),
    _Flag("alpha", type=float, default=-1.0, help="miscoverage (-1 = benchmark default)"),
    _Flag("cqr-levels", type=_comma_floats, default=(0.1, 0.9),
          help="quantile levels for the comparison benchmark"),
    _Flag("trees", type=int, default=60, help="trees per ensemble (comparison benchmark)"),
    _Flag("max-leaves", type=int, default=10, help="leaves per tree (comparison benchmark)"),
    _Flag("learning-rate", type=float, default=0.1, help="shrinkage (comparison benchmark)"),
] + _COMMON_FLAGS

_REPORT_FLAGS = [
    _Flag("input", type=str, required=True, help="allocations.json from `attribute`"),
] + _COMMON_FLAGS

_FLAG_TABLES = {"attribute": _ATTRIBUTE_FLAGS, "benchmark": _BENCHMARK_FLAGS, "report": _REPORT_FLAGS}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpshap",
        description="Feature attributions for conformal prediction intervals.",
    )
    parser.add_argument("--version", action="version", version=f"cpshap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_attr = sub.add_parser("attribute", help="attribute intervals on a CSV dataset")
    for flag in _ATTRIBUTE_FLAGS:
        flag.add_to(p_attr)

    p_bench = sub.add_parser("benchmark", help="run a synthetic benchmark harness")
    p_bench.add_argument("name", help="benchmark name: sobol-levitan or friedman")
    for flag in _BENCHMARK_FLAGS:
        flag.add_to(p_bench)

    p_rep = sub.add_parser("report", help="summarize an allocations.json file")
    for flag in _REPORT_FLAGS:
        flag.add_to(p_rep)
    return parser


def _read_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParameterError(f"cannot read config file {path}: {exc}") from None
    out: dict[str, str] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{i}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    """Merge config-file values under explicit command-line flags."""
    if not getattr(args, "config", ""):
        return args
    table = _FLAG_TABLES[args.command]
    by_name = {f.name: f for f in table}
    values = _read_config_file(args.config)
    explicit = {tok.split("=", 1)[0][2:] for tok in argv if tok.startswith("--")}
    for key, text in values.items():
        name = key.replace("_", "-")
        flag = by_name.get(name)
        if flag is None:
            raise ParameterError(f"unknown config key {key!r} for command {args.command!r}")
        if name in explicit:
            continue
        try:
            setattr(args, flag.dest, flag.type(text))
        except argparse.ArgumentTypeError as exc:
            raise ParameterError(f"config key {key!r}: {exc}") from None
    return args


# ---------------------------------------------------------------------------
# Deterministic writers


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(c) for c in row])


def _csv_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def allocations_document(result: AttributionResult) -> dict:
    """JSON-ready document with one record per (point, value fn, kind)."""
    records = []
    for p in result.points:
        for vf in result.value_fns:
            for kind in result.allocation_kinds:
                alloc = p.allocations[(vf, kind)]
                rec = {
                    "point_id": p.point_id,
                    "method": result.method,
                    "value_fn": vf,
                    "allocation_kind": kind,
                    "estimator": alloc.estimator,
                    "values": [float(v) for v in alloc.values],
                    "interval": {
                        "lower": float(p.interval.lower),
                        "upper": float(p.interval.upper),
                        "crossed": bool(p.interval.crossed),
                    },
                    "v_full": float(p.v_full[vf]),
                    "v_empty": float(result.v_empty[vf]),
                }
                if alloc.std_err is not None:
                    rec["std_err"] = [float(s) for s in alloc.std_err]
                if alloc.estimator != "exact":
                    rec["m"] = int(alloc.m)
                records.append(rec)
    return {
        "schema_version": SCHEMA_VERSION,
        "method": result.method,
        "alpha": float(result.alpha),
        "estimator": result.estimator,
        "normalized": bool(result.normalized),
        "feature_names": list(result.feature_names),
        "records": records,
    }


def _write_rank_files(out_dir: Path, matrices, feature_names, with_top5: bool) -> None:
    """`matrices` maps (value_fn, kind) -> (n_points, d) value arrays."""
    rank_rows = []
    top_rows = []
    for (vf, kind), values in matrices.items():
        M = rank_matrix_from_values(values)
        d = M.shape[0]
        for i in range(d):
            for r in range(d):
                rank_rows.append([vf, kind, feature_names[i], r + 1, M[i, r]])
        for rank, feat, freq in modal_ranks(M):
            top_rows.append([vf, kind, rank, feature_names[feat], freq])
    _write_csv(out_dir / "rank_matrix.csv",
               ["value_fn", "allocation_kind", "feature", "rank", "frequency"], rank_rows)
    if with_top5:
        _write_csv(out_dir / "top5.csv",
                   ["value_fn", "allocation_kind", "rank", "feature", "frequency"], top_rows)


def _result_matrices(result: AttributionResult) -> dict:
    return {
        (vf, kind): result.matrix(vf, kind)
        for vf in result.value_fns
        for kind in result.allocation_kinds
    }


# ---------------------------------------------------------------------------
# attribute


_ALLOC_MAP = {
    "shap": ("shapley",),
    "pshap": ("proportional_shapley",),
    "both": ("shapley", "proportional_shapley"),
}


def _attribute_config(args, seeds) -> AttributionConfig:
    ratios = tuple(args.split)
    if len(ratios) != 2:
        raise ParameterError(f"--split needs two fractions, got {args.split!r}")
    levels = tuple(args.cqr_levels)
    if levels and len(levels) != 2:
        raise ParameterError(f"--cqr-levels needs two levels, got {args.cqr_levels!r}")
    mean_spec = _REGRESSOR_CHOICES[args.regressor]()
    return AttributionConfig(
        method=args.method,
        value_fns=(args.value,),
        allocations=_ALLOC_MAP[args.alloc],
        estimator=args.estimator,
        m=args.m,
        alpha=args.alpha,
        mean_spec=mean_spec,
        cqr_levels=levels or None,
        dispersion_transform={"abs": "absolute", "sq": "squared"}[args.dispersion_transform],
        split_ratios=ratios,
        split_seed=seeds["split"],
        train_seed=seeds["train"],
        sampling_seed=seeds["sampling"],
    )


def _manifest_flags(args, table) -> dict[str, str]:
    return {
        flag.name: flag.to_text(getattr(args, flag.dest))
        for flag in table
        if flag.name != "config"
    }


def cmd_attribute(args) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = derive_seeds(args.seed)
    config = _attribute_config(args, seeds)
    data = load_csv(args.data, args.target, categoricals=args.categoricals)
    split_data = split(data.n_rows, config.split_ratios, config.split_seed)
    if split_data.test.size == 0:
        raise ParameterError(
            "the split leaves no test rows to attribute; lower the train/calibration fractions"
        )
    X_test = data.X[split_data.test]
    runner = attribute_exact if config.estimator == "exact" else attribute_mc
    result = runner(config, data.X, data.y, X_test, data.feature_names, split_data)

    _write_json(out_dir / "allocations.json", allocations_document(result))
    _write_rank_files(out_dir, _result_matrices(result), result.feature_names, with_top5=False)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": "attribute",
        "library_version": __version__,
        "flags": _manifest_flags(args, _ATTRIBUTE_FLAGS),
        "dataset": {
            "path": args.data,
            "target": args.target,
            "fingerprint": data.fingerprint,
            "n_rows": data.n_rows,
            "n_features": data.n_features,
            "feature_names": list(data.feature_names),
            "dropped_rows": data.meta.get("dropped_rows", 0),
        },
        "seeds": {"root": int(args.seed), **seeds},
        "split": {
            "ratios": list(config.split_ratios),
            "n_train": int(split_data.train.size),
            "n_calibration": int(split_data.calibration.size),
            "n_test": int(split_data.test.size),
            "test_rows": [int(i) for i in split_data.test],
        },
        "diagnostics": {
            "trained_count": result.diagnostics.trained_count,
            "models_trained": result.diagnostics.models_trained,
            "attribution_wall_s": result.diagnostics.wall_time_s,
            "total_wall_s": time.perf_counter() - started,
        },
        "threads_env": os.environ.get("CPSHAP_THREADS"),
    }
    _write_json(out_dir / "manifest.json", manifest)
    print(
        f"attributed {result.n_points} test points "
        f"({result.diagnostics.trained_count} coalitions trained) -> {out_dir}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark


def cmd_benchmark(args) -> int:
    if args.name not in ("sobol-levitan", "friedman"):
        print(
            f"unknown benchmark {args.name!r}; choose sobol-levitan or friedman",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.name == "sobol-levitan":
        frame, meta = run_sobol_convergence(
            m_grid=args.m_grid,
            repetitions=args.reps,
            seed=args.seed,
            n_train=args.n_train,
            n_cal=args.n_cal,
            n_test=args.n_test or 50,
            alpha=args.alpha if args.alpha > 0 else 0.1,
        )
        _write_csv(
            out_dir / "convergence.csv",
            list(frame.columns),
            frame.values.tolist(),
        )
        summary = convergence_summary(frame)
        _write_csv(
            out_dir / "convergence_summary.csv",
            list(summary.columns),
            summary.values.tolist(),
        )
        meta.update(summary.attrs)
    else:
        comparison = run_friedman_comparison(
            seed=args.seed,
            n_train=args.n_train,
            n_cal=args.n_cal,
            n_test=args.n_test or 500,
            alpha=args.alpha if args.alpha > 0 else 0.01,
            cqr_levels=tuple(args.cqr_levels),
            trees=args.trees,
            max_leaves=args.max_leaves,
            learning_rate=args.learning_rate,
        )
        wide = comparison.per_feature.pivot(index="feature", columns="target", values="mean_abs")
        wide = wide.loc[list(comparison.feature_names)].reset_index()
        _write_csv(out_dir / "comparison.csv", list(wide.columns), wide.values.tolist())
        detail = comparison.per_feature
        _write_csv(out_dir / "comparison_detail.csv", list(detail.columns), detail.values.tolist())
        meta = dict(comparison.meta)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": "benchmark",
        "library_version": __version__,
        "flags": {"name": args.name, **_manifest_flags(args, _BENCHMARK_FLAGS)},
        "meta": meta,
        "threads_env": os.environ.get("CPSHAP_THREADS"),
    }
    _write_json(out_dir / "manifest.json", manifest)
    print(f"benchmark {args.name} -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _load_allocations(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "records" not in doc:
        raise DataFormatError(f"{path} is missing the records array")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataFormatError(
            f"{path}: unsupported schema_version {doc.get('schema_version')!r}"
        )
    return doc


def cmd_report(args) -> int:
    doc = _load_allocations(args.input)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_combo: dict[tuple[str, str], dict[int, list[float]]] = {}
    for rec in doc["records"]:
        try:
            key = (rec["value_fn"], rec["allocation_kind"])
            by_combo.setdefault(key, {})[int(rec["point_id"])] = rec["values"]
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"{args.input}: malformed record ({exc})") from None
    if not by_combo:
        raise DataFormatError(f"{args.input} contains no records")

    matrices = {}
    d = None
    for key, per_point in sorted(by_combo.items()):
        ordered = [per_point[pid] for pid in sorted(per_point)]
        arr = np.asarray(ordered, dtype=np.float64)
        if arr.ndim != 2:
            raise DataFormatError(f"{args.input}: ragged values arrays")
        matrices[key] = arr
        d = arr.shape[1]
    names = doc.get("feature_names") or [f"x{j + 1}" for j in range(d)]
    if len(names) != d:
        raise DataFormatError(f"{args.input}: {len(names)} feature names for {d} columns")

    _write_rank_files(out_dir, matrices, names, with_top5=True)

    kinds_by_vf: dict[str, set[str]] = {}
    for vf, kind in matrices:
        kinds_by_vf.setdefault(vf, set()).add(kind)
    agreement_rows = []
    for vf in sorted(kinds_by_vf):
        if {"shapley", "proportional_shapley"} <= kinds_by_vf[vf]:
            report = agreement_from_matrices(
                matrices[(vf, "shapley")], matrices[(vf, "proportional_shapley")], vf
            )
            agreement_rows.append(
                [vf, report.mean_tau, report.top1_agreement, len(report.taus)]
            )
    if agreement_rows:
        _write_csv(out_dir / "agreement.csv",
                   ["value_fn", "mean_kendall_tau", "top1_agreement", "n_points"],
                   agreement_rows)
    print(
        f"report on {args.input}: {len(matrices)} allocation table(s)"
        + (", agreement table written" if agreement_rows else "")
    )
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help and usage errors
        return int(exc.code or 0)
    try:
        args = _apply_config_file(args, argv)
        if args.command == "attribute":
            return cmd_attribute(args)
        if args.command == "benchmark":
            return cmd_benchmark(args)
        return cmd_report(args)
    except DegenerateBaselineError as exc:
        print(f"numeric error at test point {exc.point_id}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CPShapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
