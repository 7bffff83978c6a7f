"""Upsampling from the worst-case alternative F* and a plain SMOTE baseline."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.spatial import cKDTree

from .dataset import as_matrix, as_seedseq, gaussian_spec, generate_gaussian_mixture
from .limits import ESS_MIN, Gaussian, as_source, solve_limit, tilted_mean
from .weights import EXP_GUARD, WeightFunction, classify_tail


@dataclass(frozen=True)
class UpsampleCheck:
    beta_star: np.ndarray
    alpha_hat: float
    foc_residual: float
    pi1: float
    std_error: float = 0.0
    method: str = "quadrature"

    def to_dict(self) -> dict:
        return {"beta_star": self.beta_star.tolist(), "alpha_hat": self.alpha_hat,
                "foc_residual": self.foc_residual, "pi1": self.pi1,
                "std_error": self.std_error, "method": self.method}


def sample_fstar(majority, beta_star, m: int, seed=0) -> np.ndarray:
    """Draws from the majority law tilted by exp(beta_star'x).

    A Gaussian source is sampled exactly from N(mu + S beta, S). A sample
    matrix is resampled with weights proportional to exp(beta_star'x).
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    src = as_source(majority)
    beta = np.atleast_1d(np.asarray(beta_star, dtype=float))
    if isinstance(src, Gaussian):
        return generate_gaussian_mixture(gaussian_spec(src.mean + src.cov @ beta, src.cov), m, seed)
    tm = tilted_mean(src, beta)
    if tm.ess < ESS_MIN:
        raise ValueError(f"tilt too extreme for the sample: effective sample size {tm.ess:.3g}")
    p = src.tilt(beta).probs
    rng = np.random.default_rng(as_seedseq(seed))
    return src.atoms[rng.choice(len(p), size=m, p=p)]


def _gauss_hermite(g: Gaussian, nodes: int):
    z, w = hermegauss(nodes)
    w = w / w.sum()
    d = g.d
    pts = np.array(list(itertools.product(z, repeat=d)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
    vals, vecs = np.linalg.eigh(g.cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return g.mean + pts @ root.T, wts


def _foc_terms(weight, x, alpha, beta, psi, pi1):
    """Per-point integrand of the population first-order condition, (1, x) moments."""
    s = x @ beta
    u = alpha + s
    if np.any(weight.exponent(u) > EXP_GUARD) or np.any(s - psi > EXP_GUARD):
        raise ArithmeticError("first-order condition saturated")
    wu = weight.w(u)
    coef = -pi1 * np.exp(s - psi) * wu + (1.0 - pi1) * np.exp(u) * wu
    z = np.column_stack([np.ones(len(x)), x])
    return z * coef[:, None]


def upsampling_equivalence_check(weight: WeightFunction, majority, xbar, pi1: float,
                                 nodes: int = 40, mc_rows: int = 200_000, seed=0) -> UpsampleCheck:
    """Evaluate the population condition at beta = beta*, e^alpha = (pi1/pi0) e^-psi(beta*).

    Gaussian majority with d <= 3 uses a tensor Gauss-Hermite rule; larger d
    or a sample majority uses a sample average with its standard error.
    """
    pi1 = float(pi1)
    if not 0.0 < pi1 < 1.0:
        raise ValueError("pi1 must lie in (0, 1)")
    if classify_tail(weight).lam != 0.0:
        raise ValueError("the upsampling equivalence holds for subexponential weights only")
    src = as_source(majority)
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    beta = solve_limit(0.0, src, xbar[None, :], surround_check=False).beta_star
    psi = tilted_mean(src, beta).log_normalizer
    alpha = float(np.log(pi1 / (1.0 - pi1)) - psi)

    if isinstance(src, Gaussian) and src.d <= 3:
        x, wts = _gauss_hermite(src, nodes)
        terms = _foc_terms(weight, x, alpha, beta, psi, pi1)
        foc = wts @ terms
        return UpsampleCheck(beta, alpha, float(np.max(np.abs(foc))), pi1, 0.0, "quadrature")

    if isinstance(src, Gaussian):
        x = generate_gaussian_mixture(gaussian_spec(src.mean, src.cov), mc_rows, seed)
    else:
        x = src.atoms
    terms = _foc_terms(weight, x, alpha, beta, psi, pi1)
    foc = terms.mean(0)
    se = terms.std(0, ddof=1) / np.sqrt(len(x))
    return UpsampleCheck(beta, alpha, float(np.max(np.abs(foc))), pi1, float(np.max(se)), "sample")


def smote(minority, k: int = 5, m: int = 100, seed=0) -> np.ndarray:
    """Synthetic minority rows x + u (x' - x), x' one of the k nearest neighbours of x."""
    x = as_matrix(minority)
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(x) < k + 1:
        raise ValueError(f"smote needs at least k + 1 = {k + 1} minority rows, got {len(x)}")
    if m < 0:
        raise ValueError("m must be nonnegative")
    _, nb = cKDTree(x).query(x, k=k + 1)
    nb = np.atleast_2d(nb)
    own = nb == np.arange(len(x))[:, None]
    # drop the row itself; with duplicate rows it may not come first
    drop = np.where(own.any(1), own.argmax(1), k)
    keep = np.ones_like(nb, dtype=bool)
    keep[np.arange(len(x)), drop] = False
    nb = nb[keep].reshape(len(x), k)

    rng = np.random.default_rng(as_seedseq(seed))
    base = rng.integers(0, len(x), m)
    other = nb[base, rng.integers(0, k, m)]
    u = rng.random(m)[:, None]
    return x[base] + u * (x[other] - x[base])
