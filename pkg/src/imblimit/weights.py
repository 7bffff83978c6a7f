"""Weight functions w and the induced penalty pair (U, V).

Every weight w > 0 generates a minority reward U and majority penalty V with

    U(u) = C_U - int_u^inf w(s) ds,      V(u) = C_V + int_{-inf}^u e^s w(s) ds,

so that V'(u) = e^u U'(u).  All shipped kinds have closed forms for U and V;
quadrature is never used at runtime.

Kinds
-----
logistic      w(u) = 1 / (1 + e^u),    U = log sigmoid(u),  V = log(1 + e^u)
exp:<lam>     w(u) = lam (1-lam) e^{-lam u},  U = -(1-lam) e^{-lam u},
              V = lam e^{(1-lam) u}
polyleft:<k>  w(u) = (1 - 2u)^k for u <= 0 and (1 + u)^-2 for u > 0
delta:<u0>    unit point mass at u0; U = -1{s <= u0}, V = e^{u0} 1{s > u0}.
              Degenerate: rejected by every training routine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .errors import DegenerateWeightError

# Largest exponent evaluated directly; beyond it values are clamped and flagged.
EXP_GUARD = 700.0


class WeightKind(str, Enum):
    LOGISTIC = "logistic"
    EXPONENTIAL = "exp"
    POLYLEFT = "polyleft"
    DELTA = "delta"


class TailFamily(str, Enum):
    SUBEXPONENTIAL = "subexponential"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class WeightEval:
    """Pointwise values of w, w', U, V and V' = e^u w, plus a saturation mask."""

    u: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    U: np.ndarray
    V: np.ndarray
    dV: np.ndarray
    saturated: np.ndarray

    @property
    def any_saturated(self) -> bool:
        return bool(np.any(self.saturated))


@dataclass(frozen=True)
class TailClass:
    lam: float
    family: TailFamily
    # growth allowance in the h-rate condition; documentation only
    xi: float
    right_tail_bounded: bool
    probed_lam: float


@dataclass(frozen=True)
class WeightFunction:
    """Immutable member of the weight family.

    ``param`` is lambda for ``exp``, the left-tail degree k for ``polyleft``
    and the atom location u0 for ``delta``; unused for ``logistic``.
    """

    kind: WeightKind
    param: float = 0.0

    def __post_init__(self):
        kind = WeightKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = float(self.param)
        if kind is WeightKind.EXPONENTIAL and not 0.0 < p < 1.0:
            raise ValueError(f"exponential weight needs lambda in (0, 1), got {p}")
        if kind is WeightKind.POLYLEFT and not p >= 0.0:
            raise ValueError(f"polyleft weight needs degree k >= 0, got {p}")
        if not math.isfinite(p):
            raise ValueError("weight parameter must be finite")
        object.__setattr__(self, "param", p)

    # -- descriptive properties -------------------------------------------------

    def __str__(self):
        if self.kind is WeightKind.LOGISTIC:
            return "logistic"
        return f"{self.kind.value}:{self.param:g}"

    @property
    def lam(self) -> float:
        """Left-tail exponent lambda (0 for the subexponential kinds)."""
        if self.kind is WeightKind.EXPONENTIAL:
            return self.param
        if self.kind is WeightKind.DELTA:
            raise DegenerateWeightError("delta weight has no tail class")
        return 0.0

    @property
    def degenerate(self) -> bool:
        return self.kind is WeightKind.DELTA

    @property
    def convex(self) -> bool:
        """Whether the induced empirical loss is declared convex.

        The polyleft family is excluded: its (1 + u)^-2 right tail gives
        w + w' = (u - 1) / (1 + u)^3 < 0 on (0, 1), so V is concave there.
        """
        return self.kind in (WeightKind.LOGISTIC, WeightKind.EXPONENTIAL)

    @property
    def bounded(self) -> bool:
        if self.kind is WeightKind.POLYLEFT:
            return self.param == 0.0
        return self.kind is WeightKind.LOGISTIC

    def require_trainable(self):
        if self.degenerate:
            raise DegenerateWeightError(
                "delta weight is degenerate under imbalance (optimal slope is zero); "
                "it cannot be used for training"
            )

    # -- saturation --------------------------------------------------------------

    def exponent(self, u):
        """Largest exponent the closed forms evaluate at ``u``."""
        u = np.asarray(u, dtype=float)
        if self.kind is WeightKind.EXPONENTIAL:
            lam = self.param
            return np.maximum(-lam * u, (1.0 - lam) * u)
        if self.kind is WeightKind.POLYLEFT:
            return np.maximum(u, 0.0)
        if self.kind is WeightKind.DELTA:
            return np.zeros_like(u)
        return np.zeros_like(u)

    def _clamp(self, u, growth=False):
        # polyleft only overflows through e^u, i.e. in V and its derivatives
        u = np.asarray(u, dtype=float)
        sat = self.exponent(u) > EXP_GUARD
        if self.kind is WeightKind.EXPONENTIAL:
            lam = self.param
            lo = -EXP_GUARD / lam
            hi = EXP_GUARD / (1.0 - lam)
            return np.clip(u, lo, hi), sat
        if self.kind is WeightKind.POLYLEFT and growth:
            return np.minimum(u, EXP_GUARD), sat
        return u, sat

    # -- evaluators ----------------------------------------------------------------

    def w(self, u):
        u, _ = self._clamp(u)
        k = self.kind
        if k is WeightKind.LOGISTIC:
            return special.expit(-u)
        if k is WeightKind.EXPONENTIAL:
            lam = self.param
            return lam * (1.0 - lam) * np.exp(-lam * u)
        if k is WeightKind.POLYLEFT:
            left = np.minimum(u, 0.0)
            right = np.maximum(u, 0.0)
            return np.where(u <= 0.0, (1.0 - 2.0 * left) ** self.param, (1.0 + right) ** -2.0)
        return np.zeros_like(u)

    def dw(self, u):
        u, _ = self._clamp(u)
        k = self.kind
        if k is WeightKind.LOGISTIC:
            return -special.expit(u) * special.expit(-u)
        if k is WeightKind.EXPONENTIAL:
            lam = self.param
            return -(lam**2) * (1.0 - lam) * np.exp(-lam * u)
        if k is WeightKind.POLYLEFT:
            deg = self.param
            left = np.minimum(u, 0.0)
            right = np.maximum(u, 0.0)
            dl = -2.0 * deg * (1.0 - 2.0 * left) ** (deg - 1.0) if deg > 0 else np.zeros_like(u)
            return np.where(u <= 0.0, dl, -2.0 * (1.0 + right) ** -3.0)
        return np.zeros_like(u)

    def U(self, u):
        u, _ = self._clamp(u)
        k = self.kind
        if k is WeightKind.LOGISTIC:
            return -np.logaddexp(0.0, -u)
        if k is WeightKind.EXPONENTIAL:
            lam = self.param
            return -(1.0 - lam) * np.exp(-lam * u)
        if k is WeightKind.POLYLEFT:
            deg = self.param
            left = np.minimum(u, 0.0)
            right = np.maximum(u, 0.0)
            ul = -1.0 - ((1.0 - 2.0 * left) ** (deg + 1.0) - 1.0) / (2.0 * (deg + 1.0))
            return np.where(u <= 0.0, ul, -1.0 / (1.0 + right))
        return -(np.asarray(u) <= self.param).astype(float)

    def V(self, u):
        u, _ = self._clamp(u, growth=True)
        k = self.kind
        if k is WeightKind.LOGISTIC:
            return np.logaddexp(0.0, u)
        if k is WeightKind.EXPONENTIAL:
            lam = self.param
            return lam * np.exp((1.0 - lam) * u)
        if k is WeightKind.POLYLEFT:
            left = np.minimum(u, 0.0)
            right = np.maximum(u, 0.0)
            return np.where(u <= 0.0, self._poly_v_left(left), self._poly_v_right(right))
        return math.exp(self.param) * (np.asarray(u) > self.param).astype(float)

    def dV(self, u):
        """V'(u) = e^u w(u), evaluated without forming e^u separately."""
        u, _ = self._clamp(u, growth=True)
        k = self.kind
        if k is WeightKind.LOGISTIC:
            return special.expit(u)
        if k is WeightKind.EXPONENTIAL:
            lam = self.param
            return lam * (1.0 - lam) * np.exp((1.0 - lam) * u)
        if k is WeightKind.POLYLEFT:
            return np.exp(u) * self.w(u)
        return np.zeros_like(u)

    def d2V(self, u):
        """V''(u) = e^u (w(u) + w'(u))."""
        u, _ = self._clamp(u, growth=True)
        k = self.kind
        if k is WeightKind.LOGISTIC:
            return special.expit(u) * special.expit(-u)
        if k is WeightKind.EXPONENTIAL:
            lam = self.param
            return lam * (1.0 - lam) ** 2 * np.exp((1.0 - lam) * u)
        if k is WeightKind.POLYLEFT:
            return np.exp(u) * (self.w(u) + self.dw(u))
        return np.zeros_like(u)

    def evaluate(self, u) -> WeightEval:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        _, sat = self._clamp(u)
        return WeightEval(
            u=u, w=self.w(u), dw=self.dw(u), U=self.U(u), V=self.V(u), dV=self.dV(u), saturated=sat
        )

    # -- polyleft closed forms ---------------------------------------------------------

    def _poly_v_left(self, u):
        # int_{-inf}^u e^s (1-2s)^k ds = e^{1/2} 2^k Gamma(k+1, (1-2u)/2)
        deg = self.param
        z = (1.0 - 2.0 * u) / 2.0
        if deg == 1.0:
            return np.exp(u) * (3.0 - 2.0 * u)
        return math.exp(0.5) * 2.0**deg * special.gamma(deg + 1.0) * special.gammaincc(deg + 1.0, z)

    def _poly_v_right(self, u):
        # V(0) + int_0^u e^s (1+s)^-2 ds, using e^s/(1+s)^2 = e^s/(1+s) - d/ds[e^s/(1+s)]
        v0 = float(self._poly_v_left(np.array(0.0)))
        tail = math.exp(-1.0) * (special.expi(1.0 + u) - special.expi(1.0)) - (np.exp(u) / (1.0 + u) - 1.0)
        return v0 + tail


def make_weight(spec) -> WeightFunction:
    """Build a weight from ``logistic``, ``exp:<lam>``, ``polyleft:<k>`` or ``delta:<u0>``."""
    if isinstance(spec, WeightFunction):
        return spec
    text = str(spec).strip().lower()
    name, _, arg = text.partition(":")
    aliases = {"logistic": WeightKind.LOGISTIC, "exp": WeightKind.EXPONENTIAL,
               "exponential": WeightKind.EXPONENTIAL, "polyleft": WeightKind.POLYLEFT,
               "delta": WeightKind.DELTA}
    if name not in aliases:
        raise ValueError(f"unknown weight kind {name!r}")
    kind = aliases[name]
    if kind is WeightKind.LOGISTIC:
        if arg:
            raise ValueError("logistic weight takes no parameter")
        return WeightFunction(kind)
    if not arg:
        raise ValueError(f"weight {name!r} needs a parameter, e.g. {name}:0.5")
    try:
        value = float(arg)
    except ValueError:
        raise ValueError(f"bad weight parameter {arg!r}") from None
    return WeightFunction(kind, value)


# -- condition checks -------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionReport:
    grid: np.ndarray
    positive: np.ndarray
    nonincreasing: np.ndarray
    strictly_convex: np.ndarray
    tail_ratio: np.ndarray | None
    tail_ratio_max: np.ndarray | None
    right_tail_bounded: bool | None

    @property
    def all_pass(self) -> bool:
        ok = bool(self.positive.all() and self.nonincreasing.all() and self.strictly_convex.all())
        return ok and self.right_tail_bounded is not False

    def summary(self) -> dict:
        def failing(mask):
            return [float(x) for x in self.grid[~mask][:10]]

        return {
            "positive": bool(self.positive.all()),
            "nonincreasing": bool(self.nonincreasing.all()),
            "strictly_convex": bool(self.strictly_convex.all()),
            "strict_convexity_failures": failing(self.strictly_convex),
            "right_tail_bounded": self.right_tail_bounded,
            "tail_ratio_max": None if self.tail_ratio_max is None or not len(self.tail_ratio_max)
            else float(self.tail_ratio_max[-1]),
            "all_pass": self.all_pass,
        }


def validate_conditions(weight, grid) -> ConditionReport:
    """Check positivity, monotonicity, w + w' > 0 and the right-tail bound on ``grid``.

    ``weight`` only needs ``w``, ``dw``, ``V`` and ``bounded``, so hand-built
    weights can be checked too.  The right-tail check is skipped for bounded w;
    otherwise V(u) / (e^u w(u)) is tabulated on the nonnegative part of the
    grid and deemed bounded when its running maximum over the upper half of
    that range stays within 1% of the maximum over the lower half.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted")
    if getattr(weight, "degenerate", False):
        raise DegenerateWeightError("delta weight has no pointwise density to validate")
    w = np.asarray(weight.w(grid), dtype=float)
    dw = np.asarray(weight.dw(grid), dtype=float)
    positive = w > 0
    nonincreasing = dw <= 0
    strictly_convex = (w + dw) > 0

    ratio = ratio_max = None
    bounded = None
    if not weight.bounded:
        right = grid[grid >= 0]
        if right.size >= 2:
            with np.errstate(over="ignore", invalid="ignore"):
                ratio = np.asarray(weight.V(right), dtype=float) / (np.exp(right) * np.asarray(weight.w(right)))
            ratio_max = np.maximum.accumulate(np.where(np.isfinite(ratio), ratio, np.inf))
            half = right.size // 2
            lower = ratio_max[max(half - 1, 0)]
            bounded = bool(np.isfinite(ratio_max[-1]) and ratio_max[-1] <= 1.01 * lower)
    return ConditionReport(grid, positive, nonincreasing, strictly_convex, ratio, ratio_max, bounded)


# window used by the numeric tail probe
TAIL_WINDOW = (-40.0, -20.0)


def probe_lambda(weight, window=TAIL_WINDOW, points=201) -> float:
    """Estimate lambda from -log w(u) ~ c + lam u + k log|u| + b / u on ``window``.

    The log and reciprocal terms absorb polynomial factors h(u) = |u|^k, which
    otherwise bias a plain slope fit by about k / |u|.
    """
    u = np.linspace(window[0], window[1], points)
    y = -np.log(np.asarray(weight.w(u), dtype=float))
    basis = np.column_stack([np.ones_like(u), u, np.log(-u), 1.0 / u])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return float(coef[1])


def classify_tail(weight: WeightFunction, tol: float = 0.01) -> TailClass:
    """Left-tail class of ``weight`` with a numeric confirmation of lambda."""
    if weight.degenerate:
        raise DegenerateWeightError("delta weight has no tail class")
    lam = weight.lam
    probed = probe_lambda(weight)
    if abs(probed - lam) > tol:
        raise ArithmeticError(f"numeric tail slope {probed:.4f} disagrees with declared lambda {lam}")
    family = TailFamily.SUBEXPONENTIAL if lam == 0.0 else TailFamily.EXPONENTIAL
    if weight.bounded:
        right_ok = True
        xi = 0.0
    else:
        rep = validate_conditions(weight, np.linspace(0.0, 200.0, 401))
        right_ok = bool(rep.right_tail_bounded)
        # any xi > 0 works for polynomial h; recorded as a small positive number
        xi = 1e-3 if weight.kind is WeightKind.POLYLEFT and weight.param > 0 else 0.0
    return TailClass(lam=lam, family=family, xi=xi, right_tail_bounded=right_ok, probed_lam=probed)
