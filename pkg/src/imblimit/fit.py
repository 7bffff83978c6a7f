"""Minimizing the empirical loss.

Damped Newton on the exact Hessian with Armijo backtracking. A steepest
descent step takes over for an iteration once five Newton trial points in a
row are rejected. Saturated trial points count as rejections.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .dataset import (
    LabeledDataset,
    SurroundingDiagnostic,
    as_matrix,
    as_seedseq,
    check_surrounding,
    generate_gaussian_mixture,
    gaussian_spec,
)
from .errors import ConvergenceError, DegenerateDataError, SaturationError
from .loss import Objective
from .weights import WeightFunction

_EPS = np.finfo(float).eps


class WarmStart(str, Enum):
    ZERO = "zero"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 500
    warm_start: WarmStart = WarmStart.ZERO
    armijo: float = 1e-4
    backtrack: float = 0.5
    newton_rejections: int = 5
    max_halvings: int = 60
    check_surrounding: bool = True
    surrounding_eps: float = 0.1
    surrounding_directions: int = 256
    surrounding_rows: int = 5000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "warm_start", WarmStart(self.warm_start))
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")
        if not 0 < self.armijo < 0.5 or not 0 < self.backtrack < 1:
            raise ValueError("armijo must lie in (0, 0.5) and backtrack in (0, 1)")


@dataclass(frozen=True)
class FitResult:
    alpha: float
    beta: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool
    surrounding: SurroundingDiagnostic | None
    warm_start_used: WarmStart
    value: float = np.nan
    history: tuple = field(default=(), repr=False)

    @property
    def theta(self) -> np.ndarray:
        return np.r_[self.alpha, self.beta]

    def to_dict(self) -> dict:
        out = {
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "value": self.value,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "warm_start": self.warm_start_used.value,
        }
        if self.surrounding is not None:
            s = self.surrounding
            out["surrounding"] = {"passed": s.passed, "eps": s.eps, "delta_hat": s.delta_hat,
                                  "directions": s.directions_probed}
        return out


def gaussian_warm_start(weight: WeightFunction, ds: LabeledDataset) -> np.ndarray:
    """Starting point from the Gaussian closed form with sample moments.

    The slope is (lam*S1 + (1 - lam)*S0)^-1 (m1 - m0); the intercept balances
    the mass of the two classes under that slope.
    """
    lam = weight.lam
    x0, x1 = ds.majority, ds.minority
    s0 = np.atleast_2d(np.cov(x0, rowvar=False))
    s1 = np.atleast_2d(np.cov(x1, rowvar=False)) if ds.n > 1 else np.zeros_like(s0)
    blend = lam * s1 + (1.0 - lam) * s0
    try:
        beta = np.linalg.solve(blend, x1.mean(0) - x0.mean(0))
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(blend, x1.mean(0) - x0.mean(0), rcond=None)[0]
    alpha = np.log(ds.n) - logsumexp(x0 @ beta)
    return np.r_[alpha, beta]


def zero_warm_start(ds: LabeledDataset) -> np.ndarray:
    return np.r_[np.log(ds.n / ds.N), np.zeros(ds.d)]


def surrounding_diagnostic(ds: LabeledDataset, opts: SolverOptions) -> SurroundingDiagnostic:
    pts = ds.majority
    if len(pts) > opts.surrounding_rows:
        rng = np.random.default_rng(as_seedseq(opts.seed))
        pts = pts[rng.choice(len(pts), opts.surrounding_rows, replace=False)]
    return check_surrounding(pts, ds.minority_mean, opts.surrounding_eps,
                             n_directions=opts.surrounding_directions, seed=opts.seed)


def _initial(weight, ds, opts, obj, init):
    if init is not None:
        theta = np.asarray(init, dtype=float).ravel()
        if theta.shape != (ds.d + 1,):
            raise ValueError(f"init must have length {ds.d + 1}")
        if np.isfinite(obj.value(theta)):
            return theta, opts.warm_start
    if opts.warm_start is WarmStart.GAUSSIAN:
        theta = gaussian_warm_start(weight, ds)
        if np.all(np.isfinite(theta)) and np.isfinite(obj.value(theta)):
            return theta, WarmStart.GAUSSIAN
    theta = zero_warm_start(ds)
    if not np.isfinite(obj.value(theta)):
        raise SaturationError(
            "loss saturated at the starting point; consider standardizing features",
            count=int(ds.n + ds.N),
        )
    return theta, WarmStart.ZERO


def _newton_direction(hess, grad):
    try:
        c = np.linalg.cholesky(hess)
        return -np.linalg.solve(c.T, np.linalg.solve(c, grad))
    except np.linalg.LinAlgError:
        pass
    tau = max(1e-12, 1e-8 * abs(np.trace(hess)))
    eye = np.eye(len(grad))
    for _ in range(60):
        try:
            c = np.linalg.cholesky(hess + tau * eye)
            return -np.linalg.solve(c.T, np.linalg.solve(c, grad))
        except np.linalg.LinAlgError:
            tau *= 10.0
    return -grad


def fit(weight: WeightFunction, ds: LabeledDataset, opts: SolverOptions | None = None, init=None) -> FitResult:
    """Minimize C_N over (alpha, beta).

    Returns a result flagged ``converged=False`` when the iteration cap is hit
    or the line search stalls. Raises :class:`SaturationError` when every
    trial point is saturated, which happens when raw features push scores
    past the exponent guard.
    """
    opts = opts or SolverOptions()
    weight.require_trainable()
    obj = Objective(weight, ds)

    diag = None
    if opts.check_surrounding:
        diag = surrounding_diagnostic(ds, opts)
        if not diag.passed:
            warnings.warn(
                f"majority sample does not surround the minority mean at eps={opts.surrounding_eps:g}; "
                "a finite minimizer may not exist",
                RuntimeWarning, stacklevel=2,
            )

    theta, used = _initial(weight, ds, opts, obj, init)
    ev = obj.evaluate(theta)
    f, g = ev.value, ev.gradient
    history = [f]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= opts.tol * max(1.0, abs(f)):
            converged = True
            it -= 1
            break
        p = _newton_direction(ev.hessian, g)
        slope = float(g @ p)
        if slope >= 0:
            p, slope = -g, -float(g @ g)

        accepted = False
        saturated_only = True
        t = 1.0
        rejections = 0
        newton = True
        for _ in range(opts.max_halvings):
            trial = theta + t * p
            f_new = obj.value(trial)
            if np.isfinite(f_new):
                saturated_only = False
                if f_new <= f + opts.armijo * t * slope:
                    accepted = True
                elif newton and t == 1.0 and f_new <= f + 8 * _EPS * max(1.0, abs(f)):
                    # quadratic phase: the decrease is below round-off, so judge by the gradient
                    ev_new = obj.evaluate(trial)
                    if np.max(np.abs(ev_new.gradient)) < gnorm:
                        accepted = True
            if accepted:
                break
            rejections += 1
            if newton and rejections >= opts.newton_rejections:
                newton = False
                hscale = max(np.linalg.norm(ev.hessian, 2), _EPS)
                p = -g / hscale
                slope = float(g @ p)
                t = 1.0
                continue
            t *= opts.backtrack

        if not accepted:
            if saturated_only:
                raise SaturationError(
                    "every trial step saturated the loss; consider standardizing features",
                    count=int(ds.n + ds.N),
                )
            break
        theta = trial
        ev = obj.evaluate(theta)
        f, g = ev.value, ev.gradient
        history.append(f)
    else:
        gnorm = float(np.max(np.abs(g)))
        converged = gnorm <= opts.tol * max(1.0, abs(f))

    return FitResult(
        alpha=float(theta[0]),
        beta=theta[1:].copy(),
        grad_norm=float(np.max(np.abs(g))),
        iterations=it,
        converged=converged,
        surrounding=diag,
        warm_start_used=used,
        value=float(f),
        history=tuple(history),
    )


@dataclass(frozen=True)
class ToySpec:
    """Fixed minority points and a Gaussian majority law."""

    minority: np.ndarray = field(default_factory=lambda: np.array([[0.0], [1.0]]))
    majority_mean: np.ndarray = field(default_factory=lambda: np.zeros(1))
    majority_cov: np.ndarray = field(default_factory=lambda: np.eye(1))

    def __post_init__(self):
        object.__setattr__(self, "minority", as_matrix(self.minority))
        mean = np.atleast_1d(np.asarray(self.majority_mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.majority_cov, dtype=float))
        if cov.shape != (len(mean), len(mean)) or self.minority.shape[1] != len(mean):
            raise ValueError("toy dimensions disagree")
        object.__setattr__(self, "majority_mean", mean)
        object.__setattr__(self, "majority_cov", cov)

    @property
    def d(self) -> int:
        return len(self.majority_mean)

    def draw(self, N: int, seed) -> LabeledDataset:
        maj = generate_gaussian_mixture(gaussian_spec(self.majority_mean, self.majority_cov), N, seed)
        return LabeledDataset.from_classes(self.minority, maj)


_CELL_ERRORS = (SaturationError, ConvergenceError, DegenerateDataError, np.linalg.LinAlgError)


def _replication(weight, toy, grid, seq, opts):
    rows = []
    prev = None
    for N, child in zip(grid, seq.spawn(len(grid))):
        init = None
        if prev is not None:
            init = prev[1].copy()
            init[0] += np.log(prev[0] / N)
        try:
            ds = toy.draw(N, child)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = fit(weight, ds, opts, init=init)
        except _CELL_ERRORS:
            rows.append(None)
            prev = None
            continue
        if res.converged:
            rows.append(res.theta)
            prev = (N, res.theta)
        else:
            rows.append(None)
            prev = None
    return rows


def fit_path(weight: WeightFunction, toy: ToySpec | None = None, N_grid=(10, 100, 1000), reps: int = 200,
             seed=0, opts: SolverOptions | None = None, workers: int = 1) -> pd.DataFrame:
    """Replicated fits along an increasing grid of majority sizes.

    Each replication draws a fresh majority sample per N and warm starts from
    its own solution at the previous N, shifting the intercept by
    log(N_prev / N). Failed or non-converged cells are counted as invalid.
    """
    toy = toy or ToySpec()
    grid = [int(N) for N in N_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
        raise ValueError("N_grid must be positive and strictly increasing")
    opts = replace(opts or SolverOptions(), check_surrounding=False)
    seqs = as_seedseq(seed).spawn(reps)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda s: _replication(weight, toy, grid, s, opts), seqs))
    else:
        results = [_replication(weight, toy, grid, s, opts) for s in seqs]

    records = []
    for k, N in enumerate(grid):
        cells = [r[k] for r in results if r[k] is not None]
        rec = {"weight": str(weight), "N": N, "valid": len(cells), "invalid": reps - len(cells)}
        arr = np.array(cells) if cells else np.full((0, toy.d + 1), np.nan)
        names = ["alpha"] + (["beta"] if toy.d == 1 else [f"beta_{j}" for j in range(toy.d)])
        for j, name in enumerate(names):
            col = arr[:, j]
            rec[f"mean_{name}"] = float(col.mean()) if len(col) else np.nan
            rec[f"se_{name}"] = float(col.std(ddof=1) / np.sqrt(len(col))) if len(col) > 1 else np.nan
        records.append(rec)
    return pd.DataFrame.from_records(records)


def alpha_drift(table: pd.DataFrame, min_N: int = 1000) -> pd.DataFrame:
    """Differences of mean alpha per decade of N, for N at or above ``min_N``."""
    t = table[table["N"] >= min_N].sort_values("N")
    N = t["N"].to_numpy(float)
    a = t["mean_alpha"].to_numpy(float)
    out = pd.DataFrame({
        "N_from": N[:-1].astype(int),
        "N_to": N[1:].astype(int),
        "per_decade": np.diff(a) / np.diff(np.log10(N)),
    })
    out["alpha_plus_logN_from"] = a[:-1] + np.log(N[:-1])
    return out
