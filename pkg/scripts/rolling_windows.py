#!/usr/bin/env python3
"""Rolling-window protocol over a CSV with a period column.

For each period P with enough history, train on the ``--window`` periods
before P and test on P. Features are encoded with the schema; the period
column itself is not a feature and must not appear in the schema.
"""

import argparse
import sys

import pandas as pd

from imblimit.dataset import encode_frame, read_schema
from imblimit.errors import DegenerateDataError
from imblimit.experiments import run_threshold_protocol

WEIGHTS = "logistic,exp:0.1,exp:0.5,exp:0.9"


def windows(periods, width):
    periods = sorted(periods)
    for k in range(width, len(periods)):
        yield periods[k - width:k], periods[k]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--period", required=True, help="column holding the period (year, quarter, ...)")
    p.add_argument("--window", type=int, default=2, help="training periods per window")
    p.add_argument("--weights", default=WEIGHTS)
    p.add_argument("--tpr", type=float, default=0.99)
    p.add_argument("--out", default="results/rolling.csv")
    a = p.parse_args(argv)

    frame = pd.read_csv(a.data, dtype=str)
    schema = read_schema(a.schema)
    if a.period in schema:
        p.error("the period column must not be in the schema")
    weights = [w for w in a.weights.split(",") if w]
    rows = []
    for train_periods, test_period in windows(frame[a.period].unique(), a.window):
        tr = frame[frame[a.period].isin(train_periods)]
        te = frame[frame[a.period] == test_period]
        try:
            # categorical levels must agree, so encode the window together
            both = encode_frame(pd.concat([tr, te], ignore_index=True), schema, drop_degenerate=True)
        except DegenerateDataError as err:
            print(f"skip {test_period}: {err}", file=sys.stderr)
            continue
        split_at = len(tr.dropna(subset=[c for c, k in schema.items() if k != "categorical"]))
        n_rows = len(both.labels)
        try:
            train = both.subset(slice(0, split_at))
            test = both.subset(slice(split_at, n_rows))
        except DegenerateDataError as err:
            print(f"skip {test_period}: {err}", file=sys.stderr)
            continue
        t = run_threshold_protocol(train, test, weights, a.tpr)
        t.insert(0, "test_period", test_period)
        rows.append(t)
    if not rows:
        print("no usable windows", file=sys.stderr)
        return 1
    out = pd.concat(rows, ignore_index=True)
    out.to_csv(a.out, index=False)
    print(out.to_string(index=False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
