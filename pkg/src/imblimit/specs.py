"""Parsers for the short source strings used by the CLI and config files.

    inline:0,1          two 1-D points
    inline:0:2,1.5:3    two 2-D points (coordinates joined by ':' or space)
    gaussian:0,1        N(0, 1)
    gaussian:{"mean": [0, 0], "cov": [[1, 0], [0, 1]]}
    csv:path.csv        numeric matrix from a CSV file with a header row
    path.csv            same as csv:path.csv
"""

from __future__ import annotations

import json
import re

import numpy as np
import pandas as pd

from .limits import Gaussian


def parse_inline(text: str) -> np.ndarray:
    rows = [r for r in text.split(",") if r.strip()]
    if not rows:
        raise ValueError("inline spec has no points")
    pts = [[float(v) for v in re.split(r"[:\s]+", r.strip())] for r in rows]
    if len({len(p) for p in pts}) != 1:
        raise ValueError("inline points have different dimensions")
    return np.array(pts, dtype=float)


def parse_gaussian(text: str) -> Gaussian:
    text = text.strip()
    if text.startswith("{"):
        obj = json.loads(text)
        return Gaussian(obj["mean"], obj["cov"])
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 2:
        raise ValueError("use gaussian:<mean>,<variance> in 1-D or a JSON object with mean and cov")
    if parts[1] <= 0:
        raise ValueError("variance must be positive")
    return Gaussian([parts[0]], [[parts[1]]])


def read_matrix(path) -> np.ndarray:
    frame = pd.read_csv(path)
    if frame.empty:
        raise ValueError(f"{path}: no rows")
    try:
        return frame.to_numpy(dtype=float)
    except ValueError as err:
        raise ValueError(f"{path}: all columns must be numeric") from err


def parse_source(text: str):
    """A Gaussian law or a sample matrix."""
    kind, _, rest = text.partition(":")
    if kind == "gaussian":
        return parse_gaussian(rest)
    if kind == "inline":
        return parse_inline(rest)
    if kind == "csv":
        return read_matrix(rest)
    return read_matrix(text)


def parse_points(text: str) -> np.ndarray:
    src = parse_source(text)
    if isinstance(src, Gaussian):
        raise ValueError("expected points, got a Gaussian law")
    return src
