"""Labeled datasets: CSV ingestion, encoding, synthetic draws, splits and the
empirical surrounding diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DegenerateDataError

MISSING_LEVEL = "<missing>"
SCHEMA_KINDS = ("numeric", "categorical", "label")


def as_matrix(x) -> np.ndarray:
    """2-D float view of ``x``; a 1-D input is read as one feature per row."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    return x


def as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


@dataclass(frozen=True)
class EncodedColumn:
    """One encoded feature: a numeric source column or one indicator level."""

    source: str
    level: str | None = None

    @property
    def name(self) -> str:
        return self.source if self.level is None else f"{self.source}={self.level}"


@dataclass(frozen=True)
class Encoder:
    columns: tuple[EncodedColumn, ...]
    # categorical levels in encoding order, the first (dropped) level included
    levels: dict = field(default_factory=dict)
    label: str = "label"
    means: np.ndarray | None = None
    scales: np.ndarray | None = None
    standardized: bool = False

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def decode(self) -> dict:
        """Map each source column to its levels (``None`` for numeric columns)."""
        out: dict = {}
        for c in self.columns:
            if c.level is None:
                out[c.source] = None
            else:
                out[c.source] = list(self.levels[c.source])
        for src, lv in self.levels.items():
            out.setdefault(src, list(lv))
        return out


@dataclass(frozen=True)
class LabeledDataset:
    """Encoded feature matrix with binary labels (1 = minority class)."""

    features: np.ndarray
    labels: np.ndarray
    encoder: Encoder | None = None

    def __post_init__(self):
        x = as_matrix(self.features).copy()
        y = np.asarray(self.labels).astype(np.int8).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError("features and labels have different row counts")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        if np.isnan(x).any():
            raise ValueError("encoded features contain missing values")
        if (y == 1).sum() == 0 or (y == 0).sum() == 0:
            raise DegenerateDataError("empty class: both labels must be present")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_classes(cls, minority, majority, encoder=None):
        minority = as_matrix(minority)
        majority = as_matrix(majority)
        x = np.vstack([minority, majority])
        y = np.r_[np.ones(len(minority), np.int8), np.zeros(len(majority), np.int8)]
        return cls(x, y, encoder)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @cached_property
    def minority_index(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    @cached_property
    def majority_index(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)

    @cached_property
    def minority(self) -> np.ndarray:
        return self.features[self.minority_index]

    @cached_property
    def majority(self) -> np.ndarray:
        return self.features[self.majority_index]

    @property
    def n(self) -> int:
        return len(self.minority_index)

    @property
    def N(self) -> int:
        return len(self.majority_index)

    @property
    def minority_mean(self) -> np.ndarray:
        return self.minority.mean(axis=0)

    @property
    def column_names(self) -> list[str]:
        if self.encoder is not None:
            return self.encoder.names
        return [f"x{i}" for i in range(self.d)]

    def subset(self, rows) -> "LabeledDataset":
        return LabeledDataset(self.features[rows], self.labels[rows], self.encoder)


# -- schema / CSV ----------------------------------------------------------------------


def read_schema(path) -> dict:
    """Parse a schema file with one ``column:kind`` per line (``#`` comments allowed)."""
    schema = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        col, sep, kind = line.rpartition(":")
        if not sep or not col.strip():
            raise ValueError(f"schema line {lineno}: expected 'column:kind', got {raw!r}")
        schema[col.strip()] = kind.strip().lower()
    return _check_schema(schema)


def _check_schema(schema: dict) -> dict:
    for col, kind in schema.items():
        if kind not in SCHEMA_KINDS:
            raise ValueError(f"column {col!r}: unknown kind {kind!r} (use {', '.join(SCHEMA_KINDS)})")
    labels = [c for c, k in schema.items() if k == "label"]
    if len(labels) != 1:
        raise ValueError("schema must declare exactly one label column")
    return dict(schema)


def load_csv(path, schema, standardize=False, drop_degenerate=False) -> LabeledDataset:
    """Read a CSV with a header row and encode it per ``schema``.

    Rows with a missing numeric value are dropped; missing categorical values
    become their own level; categorical columns are one-hot encoded with the
    first level dropped.  Every encoded column must take at least two distinct
    values: a degenerate column raises unless ``drop_degenerate`` is set, in
    which case it is omitted.
    """
    if not isinstance(schema, dict):
        schema = read_schema(schema)
    schema = _check_schema(schema)
    frame = pd.read_csv(path, dtype=str, keep_default_na=True)
    unknown = [c for c in schema if c not in frame.columns]
    if unknown:
        raise ValueError(f"unknown column(s) in schema: {unknown}")
    return encode_frame(frame, schema, standardize=standardize, drop_degenerate=drop_degenerate)


def encode_frame(frame: pd.DataFrame, schema: dict, standardize=False, drop_degenerate=False) -> LabeledDataset:
    label_col = next(c for c, k in schema.items() if k == "label")
    numeric = [c for c, k in schema.items() if k == "numeric"]
    categorical = [c for c, k in schema.items() if k == "categorical"]

    frame = frame.copy()
    for c in numeric:
        frame[c] = pd.to_numeric(frame[c], errors="raise")
    frame = frame.dropna(subset=numeric + [label_col]).reset_index(drop=True)

    raw_labels = pd.to_numeric(frame[label_col], errors="coerce")
    if raw_labels.isna().any() or not raw_labels.isin([0, 1]).all():
        raise ValueError(f"label column {label_col!r} must be binary 0/1")
    labels = raw_labels.to_numpy(dtype=np.int8)
    if (labels == 1).sum() == 0 or (labels == 0).sum() == 0:
        raise DegenerateDataError("empty class after filtering")

    blocks, cols, levels = [], [], {}
    for c in schema:
        if c in numeric:
            blocks.append(frame[c].to_numpy(dtype=float)[:, None])
            cols.append(EncodedColumn(c))
        elif c in categorical:
            values = frame[c].fillna(MISSING_LEVEL).astype(str)
            lv = sorted(values.unique())
            levels[c] = tuple(lv)
            for level in lv[1:]:
                blocks.append((values == level).to_numpy(dtype=float)[:, None])
                cols.append(EncodedColumn(c, level))
    x = np.hstack(blocks) if blocks else np.empty((len(frame), 0))

    distinct = np.array([len(np.unique(x[:, j])) for j in range(x.shape[1])], dtype=int)
    bad = [cols[j].name for j in np.flatnonzero(distinct < 2)]
    bad += [c for c in categorical if len(levels[c]) < 2]
    if bad:
        if not drop_degenerate:
            raise DegenerateDataError(f"degenerate column(s) with fewer than two distinct values: {bad}")
        keep = distinct >= 2
        x = x[:, keep]
        cols = [c for c, k in zip(cols, keep) if k]
    if x.shape[1] == 0:
        raise DegenerateDataError("no usable feature columns")

    means = x.mean(axis=0)
    scales = x.std(axis=0)
    if standardize:
        num_mask = np.array([c.level is None for c in cols])
        x = x.copy()
        x[:, num_mask] = (x[:, num_mask] - means[num_mask]) / scales[num_mask]
    enc = Encoder(tuple(cols), levels, label_col, means, scales, bool(standardize))
    return LabeledDataset(x, labels, enc)


def write_csv(ds: LabeledDataset, path, label="label"):
    frame = pd.DataFrame(ds.features, columns=ds.column_names)
    frame[label] = ds.labels
    frame.to_csv(path, index=False)


def schema_text(ds: LabeledDataset, label="label") -> str:
    """Schema lines matching :func:`write_csv` output (all columns numeric)."""
    return "".join(f"{c}:numeric\n" for c in ds.column_names) + f"{label}:label\n"


# -- synthetic data ----------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray


def _components(spec):
    comps = []
    for item in spec:
        if isinstance(item, MixtureComponent):
            comps.append(item)
        else:
            wt, mean, cov = item
            mean = np.atleast_1d(np.asarray(mean, dtype=float))
            cov = np.asarray(cov, dtype=float)
            if cov.ndim == 0:
                cov = cov * np.eye(mean.size)
            comps.append(MixtureComponent(float(wt), mean, cov))
    if not comps:
        raise ValueError("mixture needs at least one component")
    weights = np.array([c.weight for c in comps])
    if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    d = comps[0].mean.size
    for c in comps:
        if c.mean.size != d or c.cov.shape != (d, d):
            raise ValueError("mixture components have inconsistent dimensions")
        if not np.allclose(c.cov, c.cov.T):
            raise ValueError("covariance must be symmetric")
    return comps


def generate_gaussian_mixture(spec, m: int, seed) -> np.ndarray:
    """Draw ``m`` rows from a Gaussian mixture given as (weight, mean, cov) triples.

    Component labels come from inverse-CDF lookups on a dedicated uniform
    stream, so the assignment does not depend on the normal draws.
    """
    comps = _components(spec)
    d = comps[0].mean.size
    chols = []
    for c in comps:
        try:
            chols.append(np.linalg.cholesky(c.cov))
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite") from None
    if m < 0:
        raise ValueError("m must be nonnegative")
    if m == 0:
        return np.empty((0, d))
    assign_ss, draw_ss = as_seedseq(seed).spawn(2)
    cdf = np.cumsum([c.weight for c in comps])
    cdf[-1] = 1.0
    label = np.searchsorted(cdf, np.random.default_rng(assign_ss).random(m), side="right")
    z = np.random.default_rng(draw_ss).standard_normal((m, d))
    out = np.empty((m, d))
    for k, (c, L) in enumerate(zip(comps, chols)):
        rows = label == k
        out[rows] = c.mean + z[rows] @ L.T
    return out


def gaussian_spec(mean, cov):
    return [(1.0, mean, cov)]


# -- splitting -------------------------------------------------------------------------------


def _allocate(count, fractions):
    raw = np.array(fractions) * count
    base = np.floor(raw).astype(int)
    rem = count - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return base


def split(ds: LabeledDataset, fractions, seed):
    """Stratified (train, val, test) split; a zero fraction yields ``None``."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    rng = np.random.default_rng(as_seedseq(seed))
    parts = [[], [], []]
    for idx in (ds.minority_index, ds.majority_index):
        perm = rng.permutation(idx)
        counts = _allocate(len(idx), fractions)
        bounds = np.r_[0, np.cumsum(counts)]
        for k in range(3):
            parts[k].append(perm[bounds[k]:bounds[k + 1]])
    out = []
    for k, f in enumerate(fractions):
        if f == 0:
            out.append(None)
            continue
        mino, majo = parts[k]
        if len(mino) == 0:
            raise DegenerateDataError(f"split {k} receives no minority rows")
        if len(majo) == 0:
            raise DegenerateDataError(f"split {k} receives no majority rows")
        out.append(ds.subset(np.sort(np.r_[mino, majo])))
    return tuple(out)


# -- surrounding diagnostic -------------------------------------------------------------------


@dataclass(frozen=True)
class SurroundingDiagnostic:
    target: np.ndarray
    eps: float
    delta_hat: float
    directions_probed: int
    worst_direction: np.ndarray

    @property
    def passed(self) -> bool:
        return self.delta_hat > 0


def unit_directions(d, n_directions, seed):
    """``n_directions`` uniform directions on the sphere plus the 2d axis directions."""
    rng = np.random.default_rng(as_seedseq(seed))
    g = rng.standard_normal((n_directions, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    eye = np.eye(d)
    return np.vstack([eye, -eye, g])


def check_surrounding(points, target, eps, n_directions=10_000, seed=0, chunk=512) -> SurroundingDiagnostic:
    """Minimum empirical half-space mass {(x - target)'w > eps} over probed directions."""
    x = as_matrix(points)
    if x.size == 0 or x.shape[1] == 0:
        raise ValueError("points must be a non-empty matrix with d >= 1")
    if n_directions < 100:
        raise ValueError("n_directions must be at least 100")
    if eps <= 0:
        raise ValueError("eps must be positive")
    target = np.atleast_1d(np.asarray(target, dtype=float))
    dirs = unit_directions(x.shape[1], n_directions, seed)
    centered = x - target
    best, best_dir = np.inf, dirs[0]
    for start in range(0, len(dirs), chunk):
        block = dirs[start:start + chunk]
        mass = (centered @ block.T > eps).mean(axis=0)
        j = int(np.argmin(mass))
        if mass[j] < best:
            best, best_dir = float(mass[j]), block[j]
    return SurroundingDiagnostic(target, float(eps), best, len(dirs), best_dir)
