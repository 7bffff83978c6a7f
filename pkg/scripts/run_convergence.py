#!/usr/bin/env python3
"""Replicated fits on the one-dimensional toy: mean slope and intercept by N,
the analytic limit, and the per-decade intercept drift."""

import argparse
import sys

import pandas as pd

from imblimit.experiments import ExperimentConfig, run_convergence


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="results/convergence")
    a = p.parse_args(argv)

    cfg = ExperimentConfig.for_experiment("convergence", reps=a.reps, seed=a.seed, workers=a.workers,
                                          output=a.out_dir)
    rep = run_convergence(cfg)
    with pd.option_context("display.width", 160, "display.max_columns", 20):
        print(rep.table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
        print()
        print(rep.drift.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    slow = [w for w, s in rep.slow.items() if s]
    if slow:
        print(f"\nstill far from the limit at the largest N: {', '.join(slow)}")
    print(f"\nwrote {a.out_dir}/convergence.csv and convergence.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
