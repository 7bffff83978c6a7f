"""ROC curves, AUC, normalized partial AUC and threshold calibration.

Class 1 (minority) is the positive class and a case is flagged when its
score exceeds the threshold. Equal scores form a single ROC step, so a tie
between classes earns half credit, as in the Mann-Whitney statistic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dataset import as_seedseq
from .errors import DegenerateDataError


class Orientation(str, Enum):
    SPECIFICITY = "spec"
    SENSITIVITY = "sens"


@dataclass(frozen=True)
class RocCurve:
    """Points ordered by decreasing threshold; thresholds[0] is +inf."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def __len__(self):
        return len(self.fpr)


@dataclass(frozen=True)
class PaucReport:
    orientation: Orientation
    bound: float
    area: float
    pauc: float
    ci: tuple | None = None

    def to_dict(self) -> dict:
        out = {"orientation": self.orientation.value, "bound": self.bound, "area": self.area, "pauc": self.pauc}
        if self.ci is not None:
            out["ci"] = {"low": self.ci[0], "high": self.ci[1], "level": self.ci[2]}
        return out


def _scores(x, what):
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError(f"{what} scores are empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} scores must be finite")
    return x


def roc(scores_majority, scores_minority) -> RocCurve:
    s0 = _scores(scores_majority, "majority")
    s1 = _scores(scores_minority, "minority")
    allv = np.r_[s0, s1]
    lab = np.r_[np.zeros(len(s0)), np.ones(len(s1))]
    order = np.argsort(-allv, kind="mergesort")
    allv, lab = allv[order], lab[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(allv) != 0), len(allv) - 1]
    tp = np.cumsum(lab)[ends]
    fp = (ends + 1) - tp
    return RocCurve(
        thresholds=np.r_[np.inf, allv[ends]],
        fpr=np.r_[0.0, fp / len(s0)],
        tpr=np.r_[0.0, tp / len(s1)],
    )


def auc(curve: RocCurve) -> float:
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) * 0.5))


def _clipped_area(x, y, lo, hi):
    """Trapezoidal area under the polyline (x, y) restricted to x in [lo, hi].

    x must be nondecreasing; vertical segments contribute nothing.
    """
    x0, x1, y0, y1 = x[:-1], x[1:], y[:-1], y[1:]
    a = np.clip(x0, lo, hi)
    b = np.clip(x1, lo, hi)
    span = x1 - x0
    keep = (b > a) & (span > 0)
    if not np.any(keep):
        return 0.0
    x0, span, y0, y1, a, b = x0[keep], span[keep], y0[keep], y1[keep], a[keep], b[keep]
    slope = (y1 - y0) / span
    ya = y0 + slope * (a - x0)
    yb = y0 + slope * (b - x0)
    return float(np.sum((b - a) * (ya + yb) * 0.5))


def _band(orientation: Orientation, bound: float):
    if orientation is Orientation.SPECIFICITY:
        if not 0.0 < bound <= 1.0:
            raise ValueError("fp1 must lie in (0, 1]")
        return bound ** 2 / 2.0, bound
    if not 0.0 <= bound < 1.0:
        raise ValueError("tp1 must lie in [0, 1)")
    return (1.0 - bound) ** 2 / 2.0, 1.0 - bound


def pauc(curve: RocCurve, orientation, bound: float) -> PaucReport:
    """McClish-normalized partial area.

    Specificity: area under TPR for FPR in [0, fp1], min fp1^2/2, max fp1.
    Sensitivity: area under 1 - FPR for TPR in [tp1, 1], min (1 - tp1)^2/2
    (the diagonal), max 1 - tp1.
    """
    orientation = Orientation(orientation)
    bound = float(bound)
    lo, hi = _band(orientation, bound)
    if orientation is Orientation.SPECIFICITY:
        area = _clipped_area(curve.fpr, curve.tpr, 0.0, bound)
    else:
        area = _clipped_area(curve.tpr, 1.0 - curve.fpr, bound, 1.0)
    value = 0.5 * (1.0 + (area - lo) / (hi - lo))
    return PaucReport(orientation, bound, area, float(min(1.0, max(0.0, value))))


def pauc_scores(scores_majority, scores_minority, orientation, bound) -> float:
    return pauc(roc(scores_majority, scores_minority), orientation, bound).pauc


def bootstrap_pauc(scores_majority, scores_minority, orientation, bound, B: int = 1000,
                   level: float = 0.90, seed=0) -> PaucReport:
    """Percentile interval from resampling each class with replacement.

    Resamples in which a class has a single distinct score are redrawn, up
    to 10 * B attempts in total.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    s0 = _scores(scores_majority, "majority")
    s1 = _scores(scores_minority, "minority")
    point = pauc(roc(s0, s1), orientation, bound)
    rng = np.random.default_rng(as_seedseq(seed))
    values = []
    attempts = 0
    while len(values) < B:
        if attempts >= 10 * B:
            raise DegenerateDataError("too many degenerate bootstrap resamples")
        attempts += 1
        r0 = s0[rng.integers(0, len(s0), len(s0))]
        r1 = s1[rng.integers(0, len(s1), len(s1))]
        if np.ptp(r0) == 0 or np.ptp(r1) == 0:
            continue
        values.append(pauc(roc(r0, r1), orientation, bound).pauc)
    low, high = np.quantile(values, [(1 - level) / 2, (1 + level) / 2])
    return PaucReport(point.orientation, point.bound, point.area, point.pauc, (float(low), float(high), level))


def calibrate_threshold(scores_minority_train, target_tpr: float) -> float:
    """Largest t such that the fraction of scores above t is at least the target."""
    s = np.sort(_scores(scores_minority_train, "minority"))
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError("target_tpr must lie in (0, 1]")
    n = len(s)
    k = min(n, max(1, math.ceil(target_tpr * n - 1e-9)))
    return float(np.nextafter(s[n - k], -np.inf))


def rates(threshold: float, scores_majority, scores_minority):
    """(TPR, TNR) of the rule score > threshold."""
    s0 = np.asarray(scores_majority, float)
    s1 = np.asarray(scores_minority, float)
    return float(np.mean(s1 > threshold)), float(np.mean(s0 <= threshold))


def write_curve_csv(curve: RocCurve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
            w.writerow([repr(float(f)), repr(float(t)), repr(float(th))])
