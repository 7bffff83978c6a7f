"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure (a JSON
diagnostic is printed to stdout).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import load_csv, read_schema
from .errors import (
    ConvergenceError,
    DegenerateDataError,
    DegenerateWeightError,
    InfeasibleTargetError,
    SaturationError,
)
from .experiments import (
    ExperimentConfig,
    atomic_write,
    run_convergence,
    run_delta_degeneracy,
    run_pauc_study,
    run_protocol_study,
    run_threshold_protocol,
    version_string,
)
from .fit import SolverOptions, fit
from .limits import solve_limit
from .metrics import auc, bootstrap_pauc, calibrate_threshold, pauc, roc, write_curve_csv
from .specs import parse_points, parse_source
from .upsample import sample_fstar, smote
from .weights import make_weight, validate_conditions

SUBCOMMANDS = ("fit", "limit", "roc", "pauc", "calibrate", "upsample", "convergence", "pauc-study",
               "delta-demo", "protocol", "validate-weights")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_seed() -> int:
    raw = os.environ.get("IMBLIMIT_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"IMBLIMIT_SEED must be an integer, got {raw!r}") from None


def _weight(text):
    try:
        return make_weight(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_to_json) + "\n"
    if out:
        atomic_write(out, text)
    sys.stdout.write(text)


def _to_json(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _existing(path):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return path


def _infer_schema(path, label):
    head = pd.read_csv(path, nrows=1000)
    if label not in head.columns:
        raise UsageError(f"{path}: label column {label!r} not found")
    schema = {}
    for col in head.columns:
        if col == label:
            schema[col] = "label"
        elif pd.api.types.is_numeric_dtype(head[col]):
            schema[col] = "numeric"
        else:
            schema[col] = "categorical"
    return schema


def _dataset(path, schema_path, label, standardize):
    _existing(path)
    schema = read_schema(_existing(schema_path)) if schema_path else _infer_schema(path, label)
    return load_csv(path, schema, standardize=standardize)


def _read_scores(path, label="label", score="score"):
    frame = pd.read_csv(_existing(path))
    for col in (label, score):
        if col not in frame.columns:
            raise UsageError(f"{path}: needs columns {score!r} and {label!r}")
    y = frame[label].to_numpy()
    s = frame[score].to_numpy(float)
    if not set(np.unique(y)) <= {0, 1}:
        raise UsageError(f"{path}: labels must be 0/1")
    return s[y == 0], s[y == 1]


# --- handlers ---------------------------------------------------------------


def cmd_fit(a):
    a.weight.require_trainable()
    ds = _dataset(a.data, a.schema, a.label, a.standardize)
    opts = SolverOptions(tol=a.tol, max_iter=a.max_iter, warm_start=a.warm, seed=a.seed)
    res = fit(a.weight, ds, opts)
    out = res.to_dict()
    out.update({"weight": str(a.weight), "columns": ds.column_names, "n": ds.n, "N": ds.N})
    _emit(out, a.out)
    return 0


def cmd_limit(a):
    res = solve_limit(a.lam, a.majority, a.minority, warm=a.warm)
    _emit(res.to_dict(), a.out)
    return 0


def cmd_roc(a):
    s0, s1 = _read_scores(a.scores, a.label, a.score_column)
    curve = roc(s0, s1)
    if a.curve:
        write_curve_csv(curve, a.curve)
    _emit({"auc": auc(curve), "points": len(curve), "curve": a.curve}, a.out)
    return 0


def cmd_pauc(a):
    s0, s1 = _read_scores(a.scores, a.label, a.score_column)
    if a.bootstrap:
        rep = bootstrap_pauc(s0, s1, a.orient, a.bound, B=a.bootstrap, level=a.level, seed=a.seed)
    else:
        rep = pauc(roc(s0, s1), a.orient, a.bound)
    _emit(rep.to_dict(), a.out)
    return 0


def cmd_calibrate(a):
    frame = pd.read_csv(_existing(a.scores))
    if a.score_column not in frame.columns:
        raise UsageError(f"{a.scores}: needs a {a.score_column!r} column")
    s = frame[a.score_column].to_numpy(float)
    if a.label in frame.columns:
        s = s[frame[a.label].to_numpy() == 1]
    t = calibrate_threshold(s, a.tpr)
    _emit({"threshold": t, "target_tpr": a.tpr, "achieved_tpr": float(np.mean(s > t)), "n": len(s)}, a.out)
    return 0


def cmd_upsample(a):
    if a.method == "smote":
        if a.minority is None:
            raise UsageError("upsample --method smote needs --minority")
        rows = smote(a.minority, k=a.k, m=a.m, seed=a.seed)
        info = {"method": "smote", "k": a.k}
    else:
        if a.majority is None:
            raise UsageError("upsample --method fstar needs --majority")
        if a.beta is not None:
            beta = np.array(a.beta, float)
        elif a.minority is not None:
            beta = solve_limit(0.0, a.majority, a.minority.mean(0, keepdims=True)).beta_star
        else:
            raise UsageError("upsample --method fstar needs --beta or --minority")
        rows = sample_fstar(a.majority, beta, a.m, seed=a.seed)
        info = {"method": "fstar", "beta_star": beta}
    frame = pd.DataFrame(rows, columns=[f"x{j}" for j in range(rows.shape[1])])
    atomic_write(a.output, frame.to_csv(index=False, float_format="%.17g"))
    info.update({"rows": len(rows), "output": a.output, "mean": rows.mean(0) if len(rows) else []})
    _emit(info)
    return 0


def _config(a, experiment, **flags):
    flags["seed"] = a.seed
    flags["output"] = a.out_dir
    if a.config:
        return ExperimentConfig.from_file(_existing(a.config), **flags)
    return ExperimentConfig.for_experiment(experiment, **flags)


def cmd_convergence(a):
    cfg = _config(a, "convergence", weights=a.weights, N_grid=a.grid, reps=a.reps, minority=a.minority,
                  majority=a.majority, workers=a.workers)
    rep = run_convergence(cfg)
    if cfg.output is None:
        sys.stdout.write(rep.table.to_csv(index=False, float_format="%.6g"))
    else:
        _emit({"output": cfg.output, "beta_star": rep.beta_star, "slow_convergence": rep.slow})
    return 0


def cmd_pauc_study(a):
    cfg = _config(a, "pauc", weights=a.weights, lambdas=a.lambdas, N_grid=a.grid, reps=a.reps,
                  n_minority=a.n_minority, test_size=a.test_size, workers=a.workers)
    st = run_pauc_study(cfg)
    _emit({"output": cfg.output, "band_means": st.band_means.to_dict(orient="records"),
           "ordering": st.verdicts["ordering"], "gap": st.verdicts["gap"]})
    return 0


def cmd_delta(a):
    cfg = _config(a, "delta", N_grid=a.grid, u0=a.u0, minority=a.minority)
    reports = run_delta_degeneracy(cfg)
    _emit({"output": cfg.output, "reports": [r.summary() for r in reports]})
    return 0


def cmd_protocol(a):
    if a.train or a.test:
        if not (a.train and a.test):
            raise UsageError("protocol needs both --train and --test, or neither for the synthetic study")
        train = _dataset(a.train, a.schema, a.label, a.standardize)
        test = _dataset(a.test, a.schema, a.label, a.standardize)
        if train.column_names != test.column_names:
            raise UsageError("train and test encode to different columns")
        weights = a.weights or ["logistic", "exp:0.1", "exp:0.5", "exp:0.9"]
        table = run_threshold_protocol(train, test, [w.strip() for w in ",".join(weights).split(",")], a.tpr)
        if a.out_dir:
            atomic_write(Path(a.out_dir) / "protocol.csv", table.to_csv(index=False, float_format="%.10g"))
        _emit({"rows": table.to_dict(orient="records")})
        return 0
    cfg = _config(a, "protocol", weights=a.weights, N_grid=a.grid, reps=a.reps, target_tpr=a.tpr,
                  n_minority=a.n_minority, test_size=a.test_size, workers=a.workers)
    _, summary = run_protocol_study(cfg)
    _emit({"output": cfg.output, "means": summary.to_dict(orient="records")})
    return 0


def cmd_validate(a):
    lo, hi, count = a.grid
    grid = np.linspace(lo, hi, int(count))
    report = validate_conditions(a.weight, grid)
    out = report.summary()
    out["weight"] = str(a.weight)
    _emit(out, a.out)
    return 0


# --- parser -----------------------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) or v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return [int(v) for v in vals]


def _source(text):
    try:
        return parse_source(text)
    except (ValueError, OSError) as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _points(text):
    try:
        return parse_points(text)
    except (ValueError, OSError) as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _unit(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("expected a value in [0, 1]")
    return v


def _weights_list(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    for n in names:
        _weight(n)
    return names


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="imblimit", description="Weight-function classifiers under heavy class imbalance.")
    p.add_argument("--version", action="store_true", help="print version and build metadata")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def data_flags(sp):
        sp.add_argument("--schema", help="schema file with one column:kind per line")
        sp.add_argument("--label", default="label", help="label column when no schema is given")
        sp.add_argument("--standardize", action="store_true", help="center and scale numeric columns")

    def seed_flag(sp):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default: $IMBLIMIT_SEED or 0)")

    sp = sub.add_parser("fit", help="fit a classifier to a labeled CSV and print JSON")
    sp.add_argument("--weight", type=_weight, required=True, help="logistic | exp:<lam> | polyleft:<k>")
    sp.add_argument("--data", required=True, help="CSV with a header row")
    data_flags(sp)
    sp.add_argument("--warm", choices=("zero", "gaussian"), default="zero")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--out", help="also write the JSON here")
    seed_flag(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("limit", help="solve for the infinite-imbalance slope")
    sp.add_argument("--lambda", dest="lam", type=float, required=True, help="tail exponent in [0, 1)")
    sp.add_argument("--majority", type=_source, required=True, help="gaussian:<spec> | inline:<pts> | csv path")
    sp.add_argument("--minority", type=_points, required=True, help="inline:<pts> | csv path")
    sp.add_argument("--warm", choices=("zero", "gaussian"), default="zero")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_limit)

    def score_flags(sp):
        sp.add_argument("--scores", required=True, help="CSV with score and label columns")
        sp.add_argument("--score-column", default="score")
        sp.add_argument("--label", default="label")
        sp.add_argument("--out")

    sp = sub.add_parser("roc", help="ROC curve and AUC from scored data")
    score_flags(sp)
    sp.add_argument("--curve", help="write the curve as CSV here")
    sp.set_defaults(func=cmd_roc)

    sp = sub.add_parser("pauc", help="normalized partial AUC")
    score_flags(sp)
    sp.add_argument("--orient", choices=("spec", "sens"), required=True)
    sp.add_argument("--bound", type=_unit, required=True, help="fp1 for spec, tp1 for sens")
    sp.add_argument("--bootstrap", type=int, default=0, help="number of bootstrap resamples (>= 100)")
    sp.add_argument("--level", type=float, default=0.90)
    seed_flag(sp)
    sp.set_defaults(func=cmd_pauc)

    sp = sub.add_parser("calibrate", help="threshold reaching a target TPR on minority scores")
    score_flags(sp)
    sp.add_argument("--tpr", type=_unit, default=0.99)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("upsample", help="synthetic minority rows from F* or SMOTE")
    sp.add_argument("--method", choices=("fstar", "smote"), required=True)
    sp.add_argument("--majority", type=_source)
    sp.add_argument("--minority", type=_points)
    sp.add_argument("--beta", type=_floats, help="tilt vector (fstar); default solves the lambda=0 limit")
    sp.add_argument("--m", type=int, default=1000, help="rows to generate")
    sp.add_argument("--k", type=int, default=5, help="neighbours (smote)")
    sp.add_argument("--output", required=True, help="CSV path for the synthetic rows")
    seed_flag(sp)
    sp.set_defaults(func=cmd_upsample)

    def exp_flags(sp):
        sp.add_argument("--config", help="key = value config file; flags override it")
        sp.add_argument("--out-dir", help="directory for CSV and JSON outputs")
        sp.add_argument("--reps", type=int)
        sp.add_argument("--workers", type=int)
        seed_flag(sp)

    sp = sub.add_parser("convergence", help="replicated fits along an N grid (Table-1 shape)")
    sp.add_argument("--weight", dest="weights", type=_weights_list, help="comma-separated weight specs")
    sp.add_argument("--grid", type=_ints, help="comma-separated majority sizes")
    sp.add_argument("--minority", help="inline:<pts> for the toy minority")
    sp.add_argument("--majority", help="gaussian:<spec> for the toy majority")
    exp_flags(sp)
    sp.set_defaults(func=cmd_convergence)

    sp = sub.add_parser("pauc-study", help="pAUC orderings on the two-dimensional mixture")
    sp.add_argument("--weight", dest="weights", type=_weights_list, help="baseline classifiers (default logistic)")
    sp.add_argument("--lambdas", type=_floats)
    sp.add_argument("--grid", type=_ints)
    sp.add_argument("--n-minority", type=int)
    sp.add_argument("--test-size", type=int)
    exp_flags(sp)
    sp.set_defaults(func=cmd_pauc_study)

    sp = sub.add_parser("delta-demo", help="grid search of the delta-weight counting loss")
    sp.add_argument("--u0", type=float)
    sp.add_argument("--grid", type=_ints)
    sp.add_argument("--minority", help="inline:<pts>")
    exp_flags(sp)
    sp.set_defaults(func=cmd_delta)

    sp = sub.add_parser("protocol", help="calibrate on train at a target TPR, report test TPR/TNR")
    sp.add_argument("--train")
    sp.add_argument("--test")
    data_flags(sp)
    sp.add_argument("--weight", dest="weights", type=_weights_list)
    sp.add_argument("--tpr", type=_unit)
    sp.add_argument("--grid", type=_ints, help="majority size for the synthetic study")
    sp.add_argument("--n-minority", type=int)
    sp.add_argument("--test-size", type=int)
    exp_flags(sp)
    sp.set_defaults(func=cmd_protocol)

    sp = sub.add_parser("validate-weights", help="check the regularity conditions of a weight on a grid")
    sp.add_argument("--weight", type=_weight, required=True)
    sp.add_argument("--grid", type=_floats, default=[-20.0, 20.0, 2001.0], help="lo,hi,count")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_validate)
    return p


def _validate(a):
    if a.command == "validate-weights" and (len(a.grid) != 3 or a.grid[2] < 2 or a.grid[0] >= a.grid[1]):
        raise UsageError("--grid must be lo,hi,count with lo < hi and count >= 2")
    if a.command == "fit":
        a.weight.require_trainable()
        _existing(a.data)
    if a.command == "limit" and not 0.0 <= a.lam < 1.0:
        raise UsageError("--lambda must lie in [0, 1)")
    if a.command in ("roc", "pauc", "calibrate"):
        _existing(a.scores)
    if a.command == "upsample" and (a.m < 1 or a.k < 1):
        raise UsageError("--m and --k must be positive")
    # precedence: explicit flag, then a config file's seed, then $IMBLIMIT_SEED
    if hasattr(a, "seed") and a.seed is None and not getattr(a, "config", None):
        a.seed = _default_seed()


def _version_text() -> str:
    return (f"imblimit {version_string()} (python {platform.python_version()}, numpy {np.__version__}, "
            f"pandas {pd.__version__})")


def _numerical_failure(err) -> dict:
    out = {"error": type(err).__name__, "message": str(err)}
    if isinstance(err, SaturationError):
        out.update({"saturated_rows": err.count, "log_value": err.log_value})
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        if a.version:
            sys.stdout.write(_version_text() + "\n")
            return 0
        if a.command is None:
            parser.print_help(sys.stderr)
            return 1
        _validate(a)
        return a.func(a)
    except UsageError as err:
        sys.stderr.write(f"{err}\n")
        return 1
    except DegenerateWeightError as err:
        sys.stderr.write(f"error: {err}\n")
        return 1
    except (SaturationError, ConvergenceError, DegenerateDataError, InfeasibleTargetError,
            np.linalg.LinAlgError, FloatingPointError) as err:
        sys.stdout.write(json.dumps(_numerical_failure(err), indent=2, default=_to_json) + "\n")
        sys.stderr.write(f"numerical failure: {err}\n")
        return 2
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
