#!/usr/bin/env python3
"""Calibrate a threshold at a target TPR on training minority scores and report
test TPR/TNR, either on the synthetic mixture or on a user train/test pair."""

import argparse
import sys

from imblimit.dataset import load_csv
from imblimit.experiments import ExperimentConfig, run_protocol_study, run_threshold_protocol

WEIGHTS = "logistic,exp:0.1,exp:0.5,exp:0.9"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train", help="training CSV (with --test and --schema)")
    p.add_argument("--test")
    p.add_argument("--schema")
    p.add_argument("--weights", default=WEIGHTS)
    p.add_argument("--tpr", type=float, default=0.99)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="results/protocol")
    a = p.parse_args(argv)
    weights = [w for w in a.weights.split(",") if w]

    if a.train:
        if not (a.test and a.schema):
            p.error("--train needs --test and --schema")
        train = load_csv(a.train, a.schema, standardize=True)
        test = load_csv(a.test, a.schema, standardize=True)
        print(run_threshold_protocol(train, test, weights, a.tpr).to_string(index=False))
        return 0

    cfg = ExperimentConfig.for_experiment("protocol", weights=weights, reps=a.reps, seed=a.seed,
                                          target_tpr=a.tpr, output=a.out_dir)
    _, summary = run_protocol_study(cfg)
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
