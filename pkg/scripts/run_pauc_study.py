#!/usr/bin/env python3
"""pAUC against the band bound on the two-dimensional mixture, for logistic and
three exponential weights, with ordering and gap verdicts."""

import argparse
import json
import sys

from imblimit.experiments import ExperimentConfig, run_pauc_study


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--grid", default="1000,10000,50000", help="majority sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="results/pauc")
    a = p.parse_args(argv)

    cfg = ExperimentConfig.for_experiment("pauc", reps=a.reps, N_grid=a.grid, seed=a.seed, workers=a.workers,
                                          output=a.out_dir)
    st = run_pauc_study(cfg)
    table = st.band_means.pivot_table(index=["orientation", "N"], columns="classifier", values="mean_pauc")
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    print(json.dumps({"ordering": st.verdicts["ordering"], "gap": st.verdicts["gap"]}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
