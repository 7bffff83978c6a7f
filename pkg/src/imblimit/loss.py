"""Empirical loss

    C_N(a, b) = sum_i -U(a + b'x_i) + sum_j V(a + b'X_j)

with its gradient and Hessian in the parameter vector theta = (a, b).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import SaturationError
from .weights import EXP_GUARD, WeightFunction, WeightKind

_BIG = np.finfo(float).max / 4


@dataclass(frozen=True)
class LossEvaluation:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    saturation_count: int


def _design(x):
    return np.column_stack([np.ones(len(x)), x])


def scores(alpha, beta, x):
    return alpha + np.asarray(x) @ np.atleast_1d(np.asarray(beta, dtype=float))


def _log_terms(weight: WeightFunction, u_min, u_maj):
    """Per-row log of the loss terms for kinds whose terms are pure exponentials."""
    lam = weight.param
    return np.r_[np.log(1.0 - lam) - lam * u_min, np.log(lam) + (1.0 - lam) * u_maj]


def _value(weight, u_min, u_maj):
    return float(np.sum(-weight.U(u_min)) + np.sum(weight.V(u_maj)))


def _saturated(weight, u_min, u_maj):
    return int(np.count_nonzero(weight.exponent(u_min) > EXP_GUARD)
               + np.count_nonzero(weight.exponent(u_maj) > EXP_GUARD))


def loss_value(weight: WeightFunction, ds, alpha, beta) -> float:
    """C_N at (alpha, beta); raises :class:`SaturationError` past the exponent guard.

    For the exponential kind the sum is accumulated with a max shift so the
    reported log value is exact even when the loss itself overflows.
    """
    weight.require_trainable()
    u_min = scores(alpha, beta, ds.minority)
    u_maj = scores(alpha, beta, ds.majority)
    sat = _saturated(weight, u_min, u_maj)
    if weight.kind is WeightKind.EXPONENTIAL:
        log_total = float(logsumexp(_log_terms(weight, u_min, u_maj)))
        if sat or log_total > EXP_GUARD:
            raise SaturationError(
                f"loss saturated ({sat} rows beyond |exponent| {EXP_GUARD:g}); consider standardizing features",
                log_value=log_total, count=sat,
            )
        return float(np.exp(log_total))
    if sat:
        raise SaturationError(
            f"loss saturated ({sat} rows beyond |exponent| {EXP_GUARD:g}); consider standardizing features",
            count=sat,
        )
    return _value(weight, u_min, u_maj)


def loss_grad_hess(weight: WeightFunction, ds, alpha, beta) -> LossEvaluation:
    """Value, gradient and Hessian of C_N.

    Uses U' = w, U'' = w', V' = e^u w and V'' = e^u (w + w').  Saturated rows
    are evaluated at the clamped score and counted in ``saturation_count``
    instead of producing infinities.
    """
    theta = np.r_[float(alpha), np.atleast_1d(np.asarray(beta, dtype=float))]
    return Objective(weight, ds).evaluate(theta)


def foc_sums(weight: WeightFunction, ds, alpha, beta):
    """The two sides of the first-order balance: sum_i w(u_i) and sum_j e^u w(u_j),
    together with their first moments."""
    u_min = scores(alpha, beta, ds.minority)
    u_maj = scores(alpha, beta, ds.majority)
    w_min = weight.w(u_min)
    dv_maj = weight.dV(u_maj)
    return {
        "minority_mass": float(w_min.sum()),
        "majority_mass": float(dv_maj.sum()),
        "minority_moment": ds.minority.T @ w_min,
        "majority_moment": ds.majority.T @ dv_maj,
    }


class Objective:
    """C_N as a function of theta = (alpha, beta), with cached design matrices.

    The optimizer calls this many times on the same data, so the intercept
    column is attached once.
    """

    def __init__(self, weight: WeightFunction, ds):
        weight.require_trainable()
        self.weight = weight
        self.zmin = _design(ds.minority)
        self.zmaj = _design(ds.majority)

    def value(self, theta) -> float:
        wf = self.weight
        u_min = self.zmin @ theta
        u_maj = self.zmaj @ theta
        if _saturated(wf, u_min, u_maj):
            return np.inf
        if wf.kind is WeightKind.EXPONENTIAL:
            log_total = float(logsumexp(_log_terms(wf, u_min, u_maj)))
            return np.inf if log_total > EXP_GUARD else float(np.exp(log_total))
        return _value(wf, u_min, u_maj)

    def evaluate(self, theta) -> LossEvaluation:
        wf = self.weight
        u_min = self.zmin @ theta
        u_maj = self.zmaj @ theta
        sat = _saturated(wf, u_min, u_maj)
        with np.errstate(over="ignore"):
            value = _value(wf, u_min, u_maj)
            grad = -self.zmin.T @ wf.w(u_min) + self.zmaj.T @ wf.dV(u_maj)
            c_min = -wf.dw(u_min)
            c_maj = wf.d2V(u_maj)
            hess = (self.zmin * c_min[:, None]).T @ self.zmin + (self.zmaj * c_maj[:, None]).T @ self.zmaj
        if sat:
            # clamped rows times large features can still overflow the products
            value, grad, hess = (np.clip(v, -_BIG, _BIG) for v in (value, grad, hess))
            value = float(value)
        return LossEvaluation(value, grad, 0.5 * (hess + hess.T), sat)


def delta_loss(u0: float, minority_scores, majority_scores) -> float:
    """Counting loss implied by the delta weight at u0."""
    return float(np.count_nonzero(np.asarray(minority_scores) <= u0)
                 + np.exp(u0) * np.count_nonzero(np.asarray(majority_scores) > u0))
