"""Infinite-imbalance limits, exponential tilts and KL projections.

Sources are a Gaussian law, a discrete law, or a raw sample matrix (treated as
the empirical law, with effective-sample-size bookkeeping). Every solver
minimizes a convex potential whose gradient is the balance being solved, so
Newton steps can be damped by plain value decrease.

For lam in (0, 1) the slope limit minimizes

    Phi(b) = psi0((1 - lam) b) / (1 - lam) + psi1(-lam b) / lam

with gradient m0((1 - lam) b) - m1(-lam b) and Hessian (1 - lam) C0 + lam C1,
where psi1 is the CGF of the uniform law on the minority rows. For lam = 0 the
potential is psi0(b) - b'xbar.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import logsumexp, softmax

from .dataset import as_matrix, check_surrounding
from .errors import ConvergenceError, DegenerateDataError, InfeasibleTargetError

HULL_TOL = 1e-10
ESS_MIN = 10.0
TILT_EXTRAPOLATION = 30.0


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (len(mean), len(mean)):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.trace(cov)):
            raise ValueError("covariance must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def d(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class DiscreteDistribution:
    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = as_matrix(self.atoms)
        probs = np.asarray(self.probs, dtype=float).ravel()
        if len(probs) != len(atoms) or len(atoms) == 0:
            raise ValueError("need one probability per atom")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs / probs.sum())

    @classmethod
    def empirical(cls, sample) -> "DiscreteDistribution":
        sample = as_matrix(sample)
        return cls(sample, np.full(len(sample), 1.0 / len(sample)))

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.probs @ self.atoms

    def tilt(self, theta) -> "DiscreteDistribution":
        return DiscreteDistribution(self.atoms, _tilt_weights(self, np.asarray(theta, dtype=float))[0])


@dataclass(frozen=True)
class TiltedMoments:
    theta: np.ndarray
    log_normalizer: float
    mean: np.ndarray
    covariance: np.ndarray
    ess: float = np.inf

    @property
    def low_ess(self) -> bool:
        return self.ess < ESS_MIN


@dataclass(frozen=True)
class LimitResult:
    lam: float
    beta_star: np.ndarray
    residual: float
    solver_iterations: int
    converged: bool = True
    notes: tuple = field(default=())

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "beta_star": self.beta_star.tolist(), "residual": self.residual,
                "iterations": self.solver_iterations, "converged": self.converged, "notes": list(self.notes)}


class _Sample(DiscreteDistribution):
    """Empirical law of a sample matrix; tilts report effective sample size."""


def as_source(source):
    if isinstance(source, (Gaussian, DiscreteDistribution)):
        return source
    m = as_matrix(source)
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError("empty sample")
    return _Sample(m, np.full(len(m), 1.0 / len(m)))


def _tilt_weights(dist: DiscreteDistribution, theta):
    with np.errstate(divide="ignore"):
        logits = np.log(dist.probs) + dist.atoms @ theta
    psi = float(logsumexp(logits))
    return np.exp(logits - psi), psi


def tilted_mean(source, theta) -> TiltedMoments:
    """Log normalizer, mean and covariance of the law tilted by exp(theta'x)."""
    src = as_source(source)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (src.d,):
        raise ValueError(f"theta must have length {src.d}")
    if isinstance(src, Gaussian):
        return TiltedMoments(theta, float(theta @ src.mean + 0.5 * theta @ src.cov @ theta),
                             src.mean + src.cov @ theta, src.cov.copy())
    p, psi = _tilt_weights(src, theta)
    mean = p @ src.atoms
    centered = src.atoms - mean
    cov = (centered * p[:, None]).T @ centered
    ess = 1.0 / float(p @ p) if isinstance(src, _Sample) else np.inf
    return TiltedMoments(theta, psi, mean, 0.5 * (cov + cov.T), ess)


def _check_hessian(hess):
    scale = max(float(np.trace(hess)), np.finfo(float).tiny)
    if np.linalg.eigvalsh(hess).min() <= 1e-12 * scale:
        raise DegenerateDataError("Hessian numerically singular: the supports are degenerate (lie in a hyperplane)")


def _newton(parts, x0, tol=1e-12, max_iter=100, max_halvings=60):
    """Damped Newton on a convex potential given by ``parts(x) -> (value, grad, hess)``.

    Steps are halved until the value decreases. Near the optimum, where the
    decrease drops below round-off, a step is also accepted when it shrinks
    the gradient.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g, h = parts(x)
    for it in range(max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            return x, gnorm, it
        if it == max_iter:
            break
        _check_hessian(h)
        p = -np.linalg.solve(h, g)
        t = 1.0
        for _ in range(max_halvings):
            cand = parts(x + t * p)
            if np.isfinite(cand[0]):
                if cand[0] < f:
                    break
                slack = 8 * np.finfo(float).eps * max(1.0, abs(f))
                if cand[0] <= f + slack and np.max(np.abs(cand[1])) < gnorm:
                    break
            t *= 0.5
        else:
            return x, gnorm, it
        x = x + t * p
        f, g, h = cand
    return x, float(np.max(np.abs(g))), max_iter


def _centered(dist: DiscreteDistribution):
    """``dist`` shifted to mean zero, and the shift.

    psi(theta) = theta'm + psi_c(theta) with psi_c = O(|theta|^2), so psi(c theta)/c
    stays accurate as c -> 0 when evaluated through the centered law.
    """
    m = dist.mean
    return DiscreteDistribution(dist.atoms - m, dist.probs), m


def _phi_parts(lam, maj, mino, xbar, tracker):
    mino_c, _ = _centered(mino)
    if isinstance(maj, DiscreteDistribution):
        maj_c, m0 = _centered(maj)
    else:
        maj_c, m0 = maj, np.zeros(maj.d)

    def parts(beta):
        if tracker is not None:
            tracker(beta)
        a = tilted_mean(maj_c, (1.0 - lam) * beta)
        if lam == 0.0:
            return a.log_normalizer + beta @ (m0 - xbar), a.mean + m0 - xbar, a.covariance
        b = tilted_mean(mino_c, -lam * beta)
        value = a.log_normalizer / (1.0 - lam) + b.log_normalizer / lam + beta @ (m0 - xbar)
        return value, (a.mean + m0) - (b.mean + xbar), (1.0 - lam) * a.covariance + lam * b.covariance
    return parts


def _gaussian_warm(lam, maj, mino):
    if isinstance(maj, Gaussian):
        mu0, s0 = maj.mean, maj.cov
    else:
        mu0 = maj.mean
        c = maj.atoms - mu0
        s0 = (c * maj.probs[:, None]).T @ c
    c1 = mino.atoms - mino.mean
    s1 = (c1 * mino.probs[:, None]).T @ c1
    try:
        return solve_limit_gaussian(lam, mu0, s0, mino.mean, s1)
    except (DegenerateDataError, np.linalg.LinAlgError):
        return np.zeros(mino.d)


def solve_limit(lam: float, majority, minority, warm: str = "zero", tol: float = 1e-12,
                max_iter: int = 100, surround_check: bool = True) -> LimitResult:
    """Limiting slope for the tail class ``lam`` in [0, 1).

    ``majority`` may be a :class:`Gaussian`, a :class:`DiscreteDistribution`
    or a sample matrix; ``minority`` is the matrix of minority rows.
    """
    lam = float(lam)
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    maj = as_source(majority)
    mino = DiscreteDistribution.empirical(minority)
    if maj.d != mino.d:
        raise ValueError("majority and minority dimensions disagree")
    xbar = mino.mean
    notes = []

    if isinstance(maj, _Sample) and surround_check:
        pts = maj.atoms
        if len(pts) > 5000:
            pts = pts[np.random.default_rng(0).choice(len(pts), 5000, replace=False)]
        diag = check_surrounding(pts, xbar, 0.1, n_directions=256, seed=0)
        if not diag.passed:
            notes.append("majority sample does not surround the minority mean")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)

    tracker = None
    if isinstance(maj, DiscreteDistribution):
        radius = float(np.sqrt((maj.atoms ** 2).sum(1).max()))
        seen = {"max": 0.0}

        def tracker(beta):
            seen["max"] = max(seen["max"], radius * float(np.linalg.norm(beta)))

    if isinstance(maj, Gaussian) and mino.atoms.shape[0] == 1:
        # single minority point: the right side is constant
        beta = np.linalg.solve(maj.cov, xbar - maj.mean) / (1.0 - lam)
        its = 0
    else:
        x0 = _gaussian_warm(lam, maj, mino) if warm == "gaussian" else np.zeros(mino.d)
        beta, _, its = _newton(_phi_parts(lam, maj, mino, xbar, tracker), x0, tol=tol, max_iter=max_iter)

    residual = float(np.max(np.abs(_phi_parts(lam, maj, mino, xbar, None)(beta)[1])))
    if tracker is not None and seen["max"] > TILT_EXTRAPOLATION:
        notes.append(f"tilt extrapolation: max |x||beta| reached {seen['max']:.3g}")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    if residual > 1e-8:
        raise ConvergenceError(f"limit solver stopped with residual {residual:.3g} after {its} iterations")
    return LimitResult(lam, beta, residual, its, True, tuple(notes))


def solve_limit_gaussian(lam: float, mu0, sigma0, mu1, sigma1) -> np.ndarray:
    """(lam S1 + (1 - lam) S0)^-1 (mu1 - mu0); lam = 0 gives the LDA direction."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    mu0, mu1 = np.atleast_1d(np.asarray(mu0, float)), np.atleast_1d(np.asarray(mu1, float))
    blend = lam * np.atleast_2d(np.asarray(sigma1, float)) + (1.0 - lam) * np.atleast_2d(np.asarray(sigma0, float))
    if np.linalg.cond(blend) > 1e14:
        raise DegenerateDataError("blended covariance is singular")
    return np.linalg.solve(blend, mu1 - mu0)


def solve_limit_gaussian_mixed(lam: float, mu0, sigma0, minority, **kw) -> LimitResult:
    """Gaussian majority in closed form against empirical minority tilts."""
    return solve_limit(lam, Gaussian(mu0, sigma0), minority, **kw)


def _hull_slack(a_eq, b_eq, n_vars):
    """Largest s such that some feasible weights have every entry >= s."""
    a_eq = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
    a_ub = np.hstack([-np.eye(n_vars), np.ones((n_vars, 1))])
    res = linprog(np.r_[np.zeros(n_vars), -1.0], A_ub=a_ub, b_ub=np.zeros(n_vars), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, 1)] * (n_vars + 1), method="highs")
    return float(res.x[-1]) if res.status == 0 else -np.inf


def _full_rank(atoms) -> bool:
    c = atoms - atoms.mean(0)
    return np.linalg.matrix_rank(c, tol=1e-10 * max(1.0, np.abs(c).max())) == atoms.shape[1]


def kl_project(F0: DiscreteDistribution, target_mean):
    """Closest law to F0 in KL divergence with the given mean.

    Returns (F*, beta, divergence) where F* is F0 tilted by beta and the
    divergence is beta't - psi(beta).
    """
    t = np.atleast_1d(np.asarray(target_mean, dtype=float))
    if t.shape != (F0.d,):
        raise ValueError(f"target must have length {F0.d}")
    support = F0.probs > 0
    atoms = F0.atoms[support]
    k = len(atoms)
    slack = _hull_slack(np.vstack([atoms.T, np.ones(k)]), np.r_[t, 1.0], k)
    if slack <= HULL_TOL or not _full_rank(atoms):
        raise InfeasibleTargetError("target mean is not in the interior of the convex hull of the atoms")

    def parts(beta):
        m = tilted_mean(F0, beta)
        return m.log_normalizer - beta @ t, m.mean - t, m.covariance

    beta, _, _ = _newton(parts, np.zeros(F0.d))
    m = tilted_mean(F0, beta)
    return F0.tilt(beta), beta, float(beta @ t - m.log_normalizer)


@dataclass(frozen=True)
class JointTilt:
    G0: DiscreteDistribution
    G1: DiscreteDistribution
    beta_star: np.ndarray
    objective: float
    common_mean: np.ndarray

    def __iter__(self):
        return iter((self.G0, self.G1, self.beta_star, self.objective))


def joint_tilt(lam: float, F0: DiscreteDistribution, F1: DiscreteDistribution) -> JointTilt:
    """Minimize lam D(G0||F0) + (1 - lam) D(G1||F1) subject to equal means.

    The minimizers are G0 = F0 tilted by (1 - lam) beta and G1 = F1 tilted by
    -lam beta, so the tilts satisfy lam b0 + (1 - lam) b1 = 0.
    """
    lam = float(lam)
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    if F0.d != F1.d:
        raise ValueError("dimensions disagree")
    a0, a1 = F0.atoms[F0.probs > 0], F1.atoms[F1.probs > 0]
    k0, k1 = len(a0), len(a1)
    a_eq = np.vstack([
        np.hstack([a0.T, -a1.T]),
        np.r_[np.ones(k0), np.zeros(k1)],
        np.r_[np.zeros(k0), np.ones(k1)],
    ])
    slack = _hull_slack(a_eq, np.r_[np.zeros(F0.d), 1.0, 1.0], k0 + k1)
    if slack <= HULL_TOL:
        raise InfeasibleTargetError("the convex hulls of the two supports do not meet in their interiors")

    C0, c0 = _centered(F0)
    C1, c1 = _centered(F1)

    def parts(beta):
        a = tilted_mean(C0, (1.0 - lam) * beta)
        b = tilted_mean(C1, -lam * beta)
        value = a.log_normalizer / (1.0 - lam) + b.log_normalizer / lam + beta @ (c0 - c1)
        return value, (a.mean + c0) - (b.mean + c1), (1.0 - lam) * a.covariance + lam * b.covariance

    beta, _, _ = _newton(parts, np.zeros(F0.d))
    b0, b1 = (1.0 - lam) * beta, -lam * beta
    m0, m1 = tilted_mean(F0, b0), tilted_mean(F1, b1)
    mu = 0.5 * (m0.mean + m1.mean)
    objective = lam * (b0 @ mu - m0.log_normalizer) + (1.0 - lam) * (b1 @ mu - m1.log_normalizer)
    return JointTilt(F0.tilt(b0), F1.tilt(b1), beta, float(objective), mu)


def kl_divergence(g, f) -> float:
    g, f = np.asarray(g, float), np.asarray(f, float)
    pos = g > 0
    return float(np.sum(g[pos] * (np.log(g[pos]) - np.log(f[pos]))))


def renyi_identity_check(lam: float, pi1: float, f0: DiscreteDistribution, f1: DiscreteDistribution):
    """Both sides of the KL representation of the optimal nonlinear loss.

    lhs = sum (pi1 f1)^(1 - lam) (pi0 f0)^lam, computed directly.
    rhs = pi1^(1 - lam) pi0^lam exp(-inf_G {lam D(G||F0) + (1 - lam) D(G||F1)}),
    with the infimum found numerically over the simplex.
    """
    lam, pi1 = float(lam), float(pi1)
    if not (0 < lam < 1 and 0 < pi1 < 1):
        raise ValueError("lambda and pi1 must lie in (0, 1)")
    if f0.atoms.shape != f1.atoms.shape or not np.allclose(f0.atoms, f1.atoms):
        raise ValueError("f0 and f1 must share a support")
    if np.any(f0.probs <= 0) or np.any(f1.probs <= 0):
        raise ValueError("zero-mass atoms are not allowed")
    pi0 = 1.0 - pi1
    lhs = float(np.sum((pi1 * f1.probs) ** (1 - lam) * (pi0 * f0.probs) ** lam))

    c = lam * np.log(f0.probs) + (1 - lam) * np.log(f1.probs)

    def objective(z):
        g = softmax(z)
        a = np.log(g) - c
        return float(g @ a), g * (a - g @ a)

    res = minimize(objective, np.zeros(len(c)), jac=True, method="BFGS", options={"gtol": 1e-14, "maxiter": 1000})
    g = softmax(res.x)
    inf_term = lam * kl_divergence(g, f0.probs) + (1 - lam) * kl_divergence(g, f1.probs)
    rhs = pi1 ** (1 - lam) * pi0 ** lam * np.exp(-inf_term)
    return lhs, float(rhs)
