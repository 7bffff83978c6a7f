"""Reproducible studies driven by a key=value config.

Every runner is a pure function of its config: random streams derive from
``seed`` through SeedSequence spawning, outputs carry the resolved config and
a version string, and files are written through a temp file and rename.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .dataset import LabeledDataset, as_seedseq, gaussian_spec, generate_gaussian_mixture
from .errors import ConvergenceError, DegenerateDataError, SaturationError
from .fit import SolverOptions, ToySpec, alpha_drift, fit, fit_path
from .limits import Gaussian, solve_limit
from .loss import delta_loss
from .metrics import Orientation, calibrate_threshold, pauc, rates, roc
from .specs import parse_gaussian, parse_points
from .weights import WeightFunction, classify_tail, make_weight

EXPERIMENTS = ("convergence", "pauc", "delta", "protocol")

MIXTURE_MINORITY = [
    (0.1, [0.0, 2.0], [[0.3, 0.0], [0.0, 0.3]]),
    (0.9, [2.3, 2.3], [[0.2, 0.0], [0.0, 0.2]]),
]
MIXTURE_MAJORITY = gaussian_spec([0.0, 0.0], np.eye(2))

SENS_BOUNDS = tuple(np.round(np.arange(0.90, 0.995, 0.01), 2))
SPEC_BOUNDS = tuple(np.round(np.arange(0.10, 0.005, -0.01), 2))

_DEFAULTS = {
    "convergence": dict(weights=("logistic", "exp:0.5", "polyleft:1"), N_grid=(10, 100, 1000, 10000, 100000),
                        reps=200),
    "pauc": dict(weights=("logistic",), lambdas=(0.1, 0.5, 0.9), N_grid=(1000, 10000, 50000), reps=20),
    "delta": dict(weights=("delta:0",), N_grid=(5, 10000), reps=1),
    "protocol": dict(weights=("logistic", "exp:0.1", "exp:0.5", "exp:0.9"), N_grid=(10000,), reps=50,
                     test_size=10000),
}

_REQUIRED = {
    "convergence": ("weights", "N_grid", "reps"),
    "pauc": ("lambdas", "N_grid", "reps", "n_minority", "test_size"),
    "delta": ("u0", "N_grid"),
    "protocol": ("weights", "N_grid", "reps", "target_tpr", "n_minority", "test_size"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    weights: tuple = ()
    lambdas: tuple = ()
    N_grid: tuple = ()
    reps: int = 1
    seed: int = 0
    output: str | None = None
    minority: str = "inline:0,1"
    majority: str = "gaussian:0,1"
    n_minority: int = 500
    test_size: int = 100_000
    target_tpr: float = 0.99
    u0: float = 0.0
    workers: int = 1

    @classmethod
    def for_experiment(cls, experiment: str, **overrides) -> "ExperimentConfig":
        if experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        values = dict(_DEFAULTS[experiment])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(experiment=experiment, **values).validated()

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        raw = parse_key_values(Path(path).read_text(encoding="utf-8"))
        if "experiment" not in raw:
            raise ValueError(f"{path}: missing 'experiment' key")
        experiment = raw.pop("experiment")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.for_experiment(experiment, **raw)

    def validated(self) -> "ExperimentConfig":
        known = {f.name: f for f in fields(self)}
        vals = {}
        for name in known:
            v = getattr(self, name)
            if name in ("weights",):
                v = tuple(_as_list(v, str))
            elif name == "lambdas":
                v = tuple(_as_list(v, float))
            elif name == "N_grid":
                v = tuple(_as_list(v, lambda s: int(float(s))))
            elif name in ("reps", "seed", "n_minority", "test_size", "workers"):
                v = int(v)
            elif name in ("target_tpr", "u0"):
                v = float(v)
            vals[name] = v
        cfg = replace(self, **{k: v for k, v in vals.items() if k != "experiment"})
        for name in _REQUIRED[cfg.experiment]:
            v = getattr(cfg, name)
            if isinstance(v, tuple) and not v:
                raise ValueError(f"experiment {cfg.experiment!r} needs {name}")
        if cfg.reps < 1 or cfg.workers < 1:
            raise ValueError("reps and workers must be at least 1")
        if any(b <= a for a, b in zip(cfg.N_grid, cfg.N_grid[1:])) or min(cfg.N_grid, default=1) < 1:
            raise ValueError("N_grid must be positive and strictly increasing")
        if not 0.0 < cfg.target_tpr <= 1.0:
            raise ValueError("target_tpr must lie in (0, 1]")
        if any(not 0.0 < lam < 1.0 for lam in cfg.lambdas):
            raise ValueError("lambdas must lie in (0, 1)")
        for w in cfg.weights:
            make_weight(w)
        return cfg

    def resolved(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _as_list(v, conv):
    if isinstance(v, str):
        v = [s for s in (p.strip() for p in v.split(",")) if s]
    return [conv(x) for x in v]


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        key = key.strip()
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(out) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return out


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_outputs(cfg: ExperimentConfig, name: str, table: pd.DataFrame, summary: dict):
    if cfg.output is None:
        return None
    out = Path(cfg.output)
    atomic_write(out / f"{name}.csv", table.to_csv(index=False, float_format="%.10g"))
    doc = {"config": cfg.resolved(), "version": version_string(), "summary": summary}
    atomic_write(out / f"{name}.json", json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return out


def _toy(cfg: ExperimentConfig) -> ToySpec:
    g = parse_gaussian(cfg.majority.partition(":")[2]) if cfg.majority.startswith("gaussian:") else None
    if g is None:
        raise ValueError("convergence needs a Gaussian majority spec (gaussian:...)")
    return ToySpec(parse_points(cfg.minority), g.mean, g.cov)


# --- convergence ----------------------------------------------------------


@dataclass
class ConvergenceReport:
    table: pd.DataFrame
    drift: pd.DataFrame
    beta_star: dict
    slow: dict


def run_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    """Replicated fits on the toy along N_grid, with the analytic limit appended."""
    toy = _toy(cfg)
    tables, drifts, beta_star, slow = [], [], {}, {}
    for spec, seq in zip(cfg.weights, as_seedseq(cfg.seed).spawn(len(cfg.weights))):
        weight = make_weight(spec)
        tab = fit_path(weight, toy, cfg.N_grid, cfg.reps, seq, workers=cfg.workers)
        lim = solve_limit(classify_tail(weight).lam, Gaussian(toy.majority_mean, toy.majority_cov), toy.minority)
        bstar = lim.beta_star
        beta_star[spec] = bstar.tolist()
        star = {"weight": spec, "N": "inf", "valid": np.nan, "invalid": np.nan, "mean_alpha": -np.inf,
                "se_alpha": np.nan}
        bcols = [c for c in tab.columns if c.startswith("mean_beta")]
        for c, b in zip(bcols, bstar):
            star[c] = float(b)
            star[c.replace("mean_", "se_")] = np.nan
        last = tab.iloc[-1]
        gap = max(abs(float(last[c]) - b) for c, b in zip(bcols, bstar))
        se = max(float(last[c.replace("mean_", "se_")]) for c in bcols)
        slow[spec] = bool(gap > max(0.01, 3 * se))
        tab = tab.astype({"N": object})
        tables.append(pd.concat([tab, pd.DataFrame([star])], ignore_index=True))
        d = alpha_drift(tab.astype({"N": int}))
        d.insert(0, "weight", spec)
        drifts.append(d)
    table = pd.concat(tables, ignore_index=True)
    drift = pd.concat(drifts, ignore_index=True)
    write_outputs(cfg, "convergence", table, {
        "beta_star": beta_star, "slow_convergence": slow,
        "alpha_drift": drift.to_dict(orient="records"), "log10": float(np.log(10.0)),
    })
    return ConvergenceReport(table, drift, beta_star, slow)


# --- pAUC study -----------------------------------------------------------


@dataclass
class PaucStudy:
    curves: pd.DataFrame
    band_means: pd.DataFrame
    verdicts: dict


def classifier_names(cfg: ExperimentConfig) -> list[str]:
    names = [w for w in cfg.weights if not w.startswith("exp:")]
    return names + [f"exp:{lam:g}" for lam in cfg.lambdas]


def _mixture_draws(cfg, seq):
    s_min, s_t0, s_t1, s_reps = seq.spawn(4)
    minority = generate_gaussian_mixture(MIXTURE_MINORITY, cfg.n_minority, s_min)
    t0 = generate_gaussian_mixture(MIXTURE_MAJORITY, cfg.test_size, s_t0)
    t1 = generate_gaussian_mixture(MIXTURE_MINORITY, cfg.test_size, s_t1)
    return minority, t0, t1, s_reps


_QUIET = SolverOptions(check_surrounding=False)


def _pauc_cell(weights, minority, N, seq, t0, t1):
    majority = generate_gaussian_mixture(MIXTURE_MAJORITY, N, seq)
    ds = LabeledDataset.from_classes(minority, majority)
    out = {}
    for name, w in weights.items():
        try:
            res = fit(w, ds, _QUIET)
        except (SaturationError, ConvergenceError, DegenerateDataError):
            continue
        if not res.converged:
            continue
        curve = roc(t0 @ res.beta, t1 @ res.beta)
        out[name] = (
            [pauc(curve, Orientation.SENSITIVITY, b).pauc for b in SENS_BOUNDS],
            [pauc(curve, Orientation.SPECIFICITY, b).pauc for b in SPEC_BOUNDS],
        )
    return out


def _strictly_ordered(values: list[float]) -> bool:
    return all(a > b for a, b in zip(values, values[1:]))


def run_pauc_study(cfg: ExperimentConfig) -> PaucStudy:
    """pAUC against the band bound for each classifier on the two-dimensional mixture.

    The minority sample and the test draws are fixed; each replication draws
    a fresh majority sample per N. Verdicts use the mean over replications of
    the pAUC averaged across the band's bound grid, and are also reported
    pointwise per bound.
    """
    names = classifier_names(cfg)
    weights = {n: make_weight(n) for n in names}
    minority, t0, t1, s_reps = _mixture_draws(cfg, as_seedseq(cfg.seed))
    cell_seqs = [s.spawn(len(cfg.N_grid)) for s in s_reps.spawn(cfg.reps)]

    jobs = [(N, seqs[k]) for k, N in enumerate(cfg.N_grid) for seqs in cell_seqs]
    run = lambda job: (job[0], _pauc_cell(weights, minority, job[0], job[1], t0, t1))  # noqa: E731
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    rows, band = [], []
    for N in cfg.N_grid:
        cells = [r for n_, r in results if n_ == N]
        for name in names:
            got = [c[name] for c in cells if name in c]
            for orient, bounds, idx in (("sens", SENS_BOUNDS, 0), ("spec", SPEC_BOUNDS, 1)):
                arr = np.array([g[idx] for g in got]) if got else np.full((0, len(bounds)), np.nan)
                for j, b in enumerate(bounds):
                    col = arr[:, j]
                    rows.append({"N": N, "classifier": name, "orientation": orient, "bound": b,
                                 "mean_pauc": col.mean() if len(col) else np.nan,
                                 "se_pauc": col.std(ddof=1) / np.sqrt(len(col)) if len(col) > 1 else np.nan,
                                 "valid": len(col)})
                per_rep = arr.mean(1) if len(arr) else np.array([np.nan])
                band.append({"N": N, "classifier": name, "orientation": orient,
                             "mean_pauc": float(per_rep.mean()),
                             "se_pauc": float(per_rep.std(ddof=1) / np.sqrt(len(per_rep))) if len(per_rep) > 1 else np.nan,
                             "valid": len(arr)})
    curves = pd.DataFrame(rows)
    band_means = pd.DataFrame(band)
    verdicts = pauc_verdicts(cfg, curves, band_means)
    write_outputs(cfg, "pauc_study", curves, {"band_means": band_means.to_dict(orient="records"),
                                              "verdicts": verdicts})
    return PaucStudy(curves, band_means, verdicts)


def pauc_verdicts(cfg: ExperimentConfig, curves: pd.DataFrame, band_means: pd.DataFrame) -> dict:
    lams = sorted(cfg.lambdas, reverse=True)
    exp_names = [f"exp:{lam:g}" for lam in lams]
    out = {"ordering": {}, "pointwise": {}, "gap": {}}
    for N in cfg.N_grid:
        bm = band_means[band_means["N"] == N].set_index(["orientation", "classifier"])["mean_pauc"]
        sens = [float(bm[("sens", n)]) for n in exp_names]
        spec = [float(bm[("spec", n)]) for n in exp_names]
        out["ordering"][str(N)] = {
            "sensitivity_high_lambda_first": _strictly_ordered(sens),
            "specificity_low_lambda_first": _strictly_ordered(spec[::-1]),
        }
        pw = {}
        cN = curves[curves["N"] == N]
        for orient in ("sens", "spec"):
            sub = cN[cN["orientation"] == orient].pivot(index="bound", columns="classifier", values="mean_pauc")
            flags = {}
            for b, row in sub.iterrows():
                vals = [row[n] for n in exp_names]
                flags[f"{b:g}"] = _strictly_ordered(vals if orient == "sens" else vals[::-1])
            pw[orient] = flags
        out["pointwise"][str(N)] = pw
    logistic = next((w for w in cfg.weights if w == "logistic"), None)
    if logistic is not None and len(cfg.N_grid) >= 2:
        low = f"exp:{min(cfg.lambdas):g}"
        first, last = cfg.N_grid[0], cfg.N_grid[-1]
        for orient in ("sens", "spec"):
            bm = band_means[band_means["orientation"] == orient].set_index(["N", "classifier"])["mean_pauc"]
            g0 = abs(float(bm[(first, logistic)] - bm[(first, low)]))
            g1 = abs(float(bm[(last, logistic)] - bm[(last, low)]))
            out["gap"][orient] = {"N_first": first, "N_last": last, "gap_first": g0, "gap_last": g1,
                                  "shrinks": bool(g1 < g0)}
    return out


# --- delta weight ---------------------------------------------------------


@dataclass
class DeltaReport:
    N: int
    n: int
    u0: float
    min_loss: float
    argmin_alpha: np.ndarray
    argmin_beta: np.ndarray
    zero_slope_min: bool
    nonzero_beats_zero: bool
    loss_above: float

    def summary(self) -> dict:
        return {
            "N": self.N, "n": self.n, "u0": self.u0, "min_loss": self.min_loss,
            "minimizers": int(len(self.argmin_alpha)),
            "zero_slope_minimizers": int(np.sum(np.abs(self.argmin_beta) < 1e-12)),
            "all_alpha_le_u0_at_zero_slope_minimal": self.zero_slope_min,
            "nonzero_slope_beats_zero_slope": self.nonzero_beats_zero,
            "loss_at_u0_plus_1": self.loss_above,
        }


def delta_grid(alpha_range=(-5.0, 1.0), beta_range=(-3.0, 3.0), step=0.01):
    na = int(round((alpha_range[1] - alpha_range[0]) / step)) + 1
    nb = int(round((beta_range[1] - beta_range[0]) / step)) + 1
    return np.linspace(*alpha_range, na), np.linspace(*beta_range, nb)


def counting_loss_grid(u0: float, minority, majority, alphas, betas) -> np.ndarray:
    """Counting loss on the grid, shape (len(betas), len(alphas)).

    For each slope the scores are sorted once and the counts of scores past
    u0 - alpha come from a binary search.
    """
    x = np.asarray(minority, float).ravel()
    X = np.asarray(majority, float).ravel()
    cut = u0 - np.asarray(alphas, float)
    out = np.empty((len(betas), len(alphas)))
    for i, b in enumerate(betas):
        smin = np.sort(b * x)
        smaj = np.sort(b * X)
        # minority penalized when alpha + b x <= u0, majority when alpha + b X > u0
        pen_min = np.searchsorted(smin, cut, side="right")
        pen_maj = len(smaj) - np.searchsorted(smaj, cut, side="right")
        out[i] = pen_min + np.exp(u0) * pen_maj
    return out


def delta_study(u0: float, minority, N: int, seed, grid=None) -> DeltaReport:
    x = np.asarray(minority, float).ravel()
    X = generate_gaussian_mixture(gaussian_spec([0.0], [[1.0]]), N, seed).ravel()
    alphas, betas = grid if grid is not None else delta_grid()
    loss = counting_loss_grid(u0, x, X, alphas, betas)
    best = float(loss.min())
    bi, ai = np.nonzero(loss == best)
    zero = int(np.argmin(np.abs(betas)))
    at_zero = loss[zero, alphas <= u0 + 1e-12]
    return DeltaReport(
        N=N, n=len(x), u0=u0, min_loss=best,
        argmin_alpha=alphas[ai], argmin_beta=betas[bi],
        zero_slope_min=bool(np.all(at_zero == best)),
        nonzero_beats_zero=bool(best < loss[zero].min()),
        loss_above=delta_loss(u0, u0 + 1 + 0.0 * x, u0 + 1 + 0.0 * X),
    )


def run_delta_degeneracy(cfg: ExperimentConfig) -> list[DeltaReport]:
    """Grid search of the counting loss on the toy for each N in the grid."""
    minority = parse_points(cfg.minority)
    if minority.shape[1] != 1:
        raise ValueError("the delta study uses one-dimensional toy data")
    reports = [delta_study(cfg.u0, minority, N, seq)
               for N, seq in zip(cfg.N_grid, as_seedseq(cfg.seed).spawn(len(cfg.N_grid)))]
    table = pd.DataFrame([r.summary() for r in reports])
    write_outputs(cfg, "delta", table, {"reports": [r.summary() for r in reports]})
    return reports


# --- threshold protocol ---------------------------------------------------


def run_threshold_protocol(train: LabeledDataset, test: LabeledDataset, weights, target_tpr: float = 0.99,
                           opts: SolverOptions | None = None) -> pd.DataFrame:
    """Fit on train, calibrate the threshold on train minority scores, score test."""
    opts = opts or _QUIET
    rows = []
    for spec in weights:
        w = spec if isinstance(spec, WeightFunction) else make_weight(spec)
        w.require_trainable()
        res = fit(w, train, opts)
        s_train = train.minority @ res.beta
        t = calibrate_threshold(s_train, target_tpr)
        train_tpr, train_tnr = rates(t, train.majority @ res.beta, s_train)
        tpr, tnr = rates(t, test.majority @ res.beta, test.minority @ res.beta)
        rows.append({"weight": str(w), "threshold": t, "train_tpr": train_tpr, "train_tnr": train_tnr,
                     "test_tpr": tpr, "test_tnr": tnr, "converged": res.converged})
    return pd.DataFrame(rows)


def _protocol_rep(cfg, seq):
    a, b, c, d = seq.spawn(4)
    train = LabeledDataset.from_classes(generate_gaussian_mixture(MIXTURE_MINORITY, cfg.n_minority, a),
                                        generate_gaussian_mixture(MIXTURE_MAJORITY, cfg.N_grid[0], b))
    test = LabeledDataset.from_classes(generate_gaussian_mixture(MIXTURE_MINORITY, cfg.test_size, c),
                                       generate_gaussian_mixture(MIXTURE_MAJORITY, cfg.test_size, d))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return run_threshold_protocol(train, test, cfg.weights, cfg.target_tpr)


def run_protocol_study(cfg: ExperimentConfig):
    """Replicated calibrate-then-test protocol on the two-dimensional mixture."""
    seqs = as_seedseq(cfg.seed).spawn(cfg.reps)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            reps = list(ex.map(lambda s: _protocol_rep(cfg, s), seqs))
    else:
        reps = [_protocol_rep(cfg, s) for s in seqs]
    for i, r in enumerate(reps):
        r.insert(0, "rep", i)
    table = pd.concat(reps, ignore_index=True)
    summary = (table.groupby("weight", sort=False)[["test_tpr", "test_tnr"]]
               .agg(["mean", "std"]).reset_index())
    summary.columns = ["weight"] + [f"{a}_{b}" for a, b in summary.columns[1:]]
    write_outputs(cfg, "protocol", table, {"means": summary.to_dict(orient="records")})
    return table, summary
