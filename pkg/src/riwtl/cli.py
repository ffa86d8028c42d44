"""Command-line entry points: simulate, fit, tune, fig1.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
On failure a single JSON error record is written to stderr (and to
``error.json`` in the output directory when it can be created).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

import riwtl
from riwtl import simlab as sl
from riwtl import transfer as tr
from riwtl.core import Dataset, TransferProblem
from riwtl.solvers import ConvergenceError, DegenerateProblemError, SolverOptions
from riwtl.tuning import METHODS, TuneGrid, cv_tune, fit_tuned

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_CELLS = ((0, 8), (4, 8), (4, 24))


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


def fmt(v) -> str:
    """12 significant digits; empty string for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".12g")
    return str(v)


def write_csv(path: Path, rows: list, columns: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) or math.isinf(v) else float(fmt(v))
    return v


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def provenance(command: str, config: dict, seed) -> dict:
    return {
        "command": command,
        "tool": "riwtl",
        "version": riwtl.__version__,
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "rng": sl.RNG_NAME,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config,
    }


# --- data ingestion --------------------------------------------------------

def load_dataset_csv(path) -> tuple:
    """(Dataset, predictor names) from a headed CSV whose first column is ``y``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "y":
        raise DataError(f"{path}: first column must be named 'y'")
    if len(header) < 2:
        raise DataError(f"{path}: no predictor columns")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    data = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {header[j]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {i}, column {header[j]!r}: non-finite value {cell!r}")
            data[i - 2, j] = v
    return Dataset(data[:, 1:], data[:, 0]), header[1:]


def write_dataset_csv(path, d: Dataset, names=None) -> None:
    names = names or [f"x{j + 1}" for j in range(d.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + list(names))
        for yi, xi in zip(d.y, d.x):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def load_problem(target, sources, center: bool = False) -> tuple:
    """Target plus sources; ``center`` subtracts column and response means per dataset."""
    t, names = load_dataset_csv(target)
    srcs = []
    for s in sources or ():
        d, nm = load_dataset_csv(s)
        if nm != names:
            raise DataError(f"{s}: predictor columns differ from the target's")
        srcs.append(d)
    if center:
        t, srcs = t.centered(), [d.centered() for d in srcs]
    return TransferProblem(t, tuple(srcs)), names


# --- configuration ---------------------------------------------------------

SIM_KEYS = {f.name for f in fields(sl.SimConfig)} - {"m_B", "d"}
GRID_KEYS = {"M_grid", "b_grid", "n_lambda", "lambda_ratio", "folds", "link"}
SWEEP_KEYS = {"h", "oracle_A", "oracle_M", "oracle_c"}
FIG1_KEYS = {f.name for f in fields(sl.Fig1Config)}
SIM_EXTRA = {"schema_version", "cells", "methods", "scale"}


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a flat key/value mapping")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    for k, v in raw.items():
        if isinstance(v, dict):
            raise ConfigError(f"{path}: key {k!r} is nested; the config is flat")
    return raw


def _tuple(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def sim_settings(raw: dict, seed=None, replicates=None):
    unknown = set(raw) - SIM_KEYS - GRID_KEYS - SWEEP_KEYS - SIM_EXTRA
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    sim = {k: raw[k] for k in SIM_KEYS if k in raw}
    if seed is not None:
        sim["seed"] = seed
    if replicates is not None:
        sim["replicates"] = replicates
    scale = raw.get("scale", "desk")
    if scale not in ("desk", "large"):
        raise ConfigError("scale must be 'desk' or 'large'")
    try:
        cfg = sl.SimConfig.desk(**sim) if scale == "desk" else sl.SimConfig(**sim)
        grid_kw = {k: _tuple(raw[k]) if k.endswith("grid") else raw[k] for k in GRID_KEYS if k in raw}
        grid = TuneGrid(**grid_kw)
        opts = sl.SweepOptions(grid=grid, **{k: raw[k] for k in SWEEP_KEYS if k in raw})
        cells = [tuple(int(v) for v in c) for c in raw.get("cells", DEFAULT_CELLS)]
        for c in cells:
            if len(c) != 2:
                raise ValueError(f"cell {c} must be [m_B, d]")
            cfg.cell(*c)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    methods = list(_tuple(raw.get("methods", sl.ALL_METHODS)))
    bad = [m for m in methods if m not in sl.ALL_METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {list(sl.ALL_METHODS)}")
    return cfg, opts, cells, methods


# --- commands --------------------------------------------------------------

RESULT_COLUMNS = ["cell_mB", "cell_d", "shift", "method", "replicate", "sse", "sur", "rpe"]


def cmd_simulate(args) -> int:
    raw = read_config(args.config)
    cfg, opts, cells, methods = sim_settings(raw, args.seed, args.replicates)
    out = _outdir(args.out)
    res = sl.run_sweep(cfg, methods, cells, opts, threads=args.threads)
    write_csv(out / "results.csv", res.table(), RESULT_COLUMNS)
    summary_cols = ["cell_mB", "cell_d", "shift", "method", "n_ok", "n_failed", "flagged",
                    "sse_mean", "sse_std", "sur_mean", "sur_std", "rpe_mean", "rpe_std"]
    write_csv(out / "summary.csv", res.summary, summary_cols)
    echo = dict(asdict(cfg), cells=[list(c) for c in cells], methods=methods,
                grid=asdict(opts.grid), sweep={k: getattr(opts, k) for k in sorted(SWEEP_KEYS)})
    meta = provenance("simulate", echo, cfg.seed)
    meta["failures"] = res.failures
    meta["flagged_cells"] = [{k: s[k] for k in ("cell_mB", "cell_d", "method", "n_failed")}
                             for s in res.summary if s["flagged"]]
    write_json(out / "metadata.json", meta)
    return EXIT_OK


def _grid_from_args(args) -> TuneGrid:
    kw = {}
    if args.config:
        raw = read_config(args.config)
        kw = {k: _tuple(raw[k]) if k.endswith("grid") else raw[k] for k in GRID_KEYS if k in raw}
    try:
        return TuneGrid(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _informative(args, problem) -> list:
    if args.informative is None:
        return []
    try:
        J = [int(v) for v in args.informative.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--informative expects comma-separated source indices") from None
    bad = [k for k in J if not 1 <= k <= problem.K]
    if bad:
        raise ConfigError(f"--informative indices {bad} outside 1..{problem.K}")
    return J


def _check_method(args, problem):
    if args.method in tr.METHOD_TAGS.values() and problem.K == 0:
        raise ConfigError(f"{args.method} needs at least one --source")
    if args.method == "trans-lasso" and args.informative is None:
        raise ConfigError("trans-lasso needs --informative (comma-separated source indices, may be empty)")


def _direct_fit(args, problem, informative):
    """Fit at user-given parameters; None when tuning is needed."""
    opts = SolverOptions()
    m = args.method
    if args.lam is None:
        return None
    if m == "lasso":
        return tr.fit_lasso_target(problem, args.lam, opts)
    if m == "trans-lasso":
        lw = args.lambda_w if args.lambda_w is not None else args.lam
        return tr.fit_trans_lasso_oracle(problem, informative, lw, args.lam, opts)
    if args.M is None:
        return None
    variant = {v: k for k, v in tr.METHOD_TAGS.items()}[m]
    try:
        cfg = tr.RiwConfig.from_M(args.M, variant, bandwidth=args.bandwidth, lam=args.lam, split_seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return tr.fit_riw_tl_u(problem, cfg) if m == "riw-tl-u" else tr.fit_riw_tl(problem, cfg)


def cmd_fit(args) -> int:
    problem, names = load_problem(args.target, args.source, args.center)
    _check_method(args, problem)
    informative = _informative(args, problem)
    fit = _direct_fit(args, problem, informative)
    if fit is None:
        fit = fit_tuned(problem, args.method, _grid_from_args(args), args.seed, informative=informative)
    out = _outdir(args.out)
    write_csv(out / "beta_hat.csv", [{"column": n, "value": v} for n, v in zip(names, fit.beta_hat)],
              ["column", "value"])
    sel = [{"source": r.source_index, "rotation": r.rotation, "candidates": r.subset.size,
            "selected": r.n_selected, "weighted": r.weight_index.size,
            "max_weight_ratio": r.weight_ratio()} for r in fit.selections]
    write_csv(out / "selection.csv", sel,
              ["source", "rotation", "candidates", "selected", "weighted", "max_weight_ratio"])
    summary = {k: v for k, v in fit.summary().items()}
    summary["sur"] = sl.sur(fit, problem)
    summary["n_target"] = problem.target.n
    summary["n_sources"] = [s.n for s in problem.sources]
    meta = provenance("fit", {"target": str(args.target), "sources": [str(s) for s in args.source or []],
                              "method": args.method, "informative": informative, "lambda": args.lam,
                              "lambda_w": args.lambda_w, "M": args.M, "bandwidth": args.bandwidth,
                              "center": args.center},
                      args.seed)
    meta["result"] = summary
    write_json(out / "fit.json", meta)
    return EXIT_OK


def cmd_tune(args) -> int:
    problem, _ = load_problem(args.target, args.source, args.center)
    _check_method(args, problem)
    informative = _informative(args, problem)
    grid = _grid_from_args(args)
    res = cv_tune(problem, args.method, grid, args.seed, informative=informative)
    out = _outdir(args.out)
    cols = ["M", "b", "lambda", "score", "error"] if "M" in res.params else ["lambda", "score"]
    write_csv(out / "scores.csv", res.table, cols)
    meta = provenance("tune", {"target": str(args.target), "sources": [str(s) for s in args.source or []],
                               "method": args.method, "informative": informative, "grid": asdict(grid),
                               "center": args.center},
                      args.seed)
    meta["chosen"] = dict(res.params, cv_score=res.score)
    write_json(out / "chosen.json", meta)
    return EXIT_OK


def cmd_fig1(args) -> int:
    raw = read_config(args.config)
    unknown = set(raw) - FIG1_KEYS - {"schema_version"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {k: _tuple(raw[k]) if k in ("lengths", "xinf_edges") and raw[k] is not None else raw[k]
          for k in FIG1_KEYS if k in raw}
    if args.seed is not None:
        kw["seed"] = args.seed
    try:
        cfg = sl.Fig1Config(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    grid = sl.inclusion_probability_grid(cfg)
    out = _outdir(args.out)
    write_csv(out / "inclusion.csv", grid.rows(), ["delta_l1", "xinf_lo", "xinf_hi", "count", "frequency"])
    meta = provenance("fig1", asdict(cfg), cfg.seed)
    meta["xinf_edges"] = grid.xinf_edges
    write_json(out / "metadata.json", meta)
    return EXIT_OK


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riwtl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"riwtl {riwtl.__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a replicate sweep and write tidy CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--replicates", type=int)
    s.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    for name, func, help_ in (("fit", cmd_fit, "fit one estimator on CSV data"),
                              ("tune", cmd_tune, "cross-validate one estimator on CSV data")):
        f = sub.add_parser(name, help=help_)
        f.add_argument("--target", required=True)
        f.add_argument("--source", nargs="*", default=[])
        f.add_argument("--method", required=True, choices=METHODS)
        f.add_argument("--informative", help="comma-separated 1-based source indices (trans-lasso)")
        f.add_argument("--config", help="flat YAML with tuning grid keys")
        f.add_argument("--seed", type=int, default=0)
        f.add_argument("--center", action="store_true", help="center predictors and response per dataset")
        f.add_argument("--out", required=True)
        if name == "fit":
            f.add_argument("--lambda", dest="lam", type=float, help="skip tuning and fit at this lambda")
            f.add_argument("--lambda-w", dest="lambda_w", type=float)
            f.add_argument("--M", type=float, help="eta bound; A = M/2 (and T = 1.5 M for riw-tl-u)")
            f.add_argument("--bandwidth", type=float, default=0.2)
        f.set_defaults(func=func)

    g = sub.add_parser("fig1", help="inclusion frequencies by ||delta||_1 and ||x||_inf")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_fig1)
    return ap


def _fail(code: int, exc: BaseException, out) -> int:
    kind = {EXIT_CONFIG: "config_error", EXIT_DATA: "data_error", EXIT_NUMERIC: "numerical_failure"}[code]
    record = {"status": "error", "exit_code": code, "kind": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            write_json(Path(out) / "error.json", record)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "threads", None) is not None and args.threads < 1:
        return _fail(EXIT_CONFIG, ConfigError("--threads must be at least 1"), None)
    out = getattr(args, "out", None)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, out)
    except DataError as exc:
        return _fail(EXIT_DATA, exc, out)
    except (ConvergenceError, DegenerateProblemError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _fail(EXIT_NUMERIC, exc, out)
    except ValueError as exc:
        # remaining validation failures come from the data (shapes, sizes)
        return _fail(EXIT_DATA, exc, out)


if __name__ == "__main__":
    sys.exit(main())
