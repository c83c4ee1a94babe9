#!/usr/bin/env python3
"""Compare the adaptive WOR estimator against every baseline on one pool."""

import argparse

import numpy as np

from active_measure.simharness import ExperimentConfig, export_results, run_trials

POOL = dict(
    pool_kind="clustered", pool_n=100, pool_seed=11, pool_clusters=3,
    pool_amplitude=30.0, pool_base=0.5, clamp="floor", clamp_value=0.5,
    predictor="improving", sigma0=1.5, rate=1.0, bias=1.0,
)
METHODS = ("active", "dis", "dis_ais", "dis_wor", "mc", "mc_wor", "active_testing", "ppi")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=16000)
    parser.add_argument("--steps", default="10,30,50")
    parser.add_argument("--out", default="baseline_results.csv")
    args = parser.parse_args()

    steps = tuple(int(s) for s in args.steps.split(","))
    rows = []
    for method in METHODS:
        cfg = ExperimentConfig(
            method=method, weights="comb", steps=steps, trials=args.trials,
            seed=args.seed, track_variance=False, **POOL,
        )
        _, tm = run_trials(cfg, collect=True)
        err = np.abs(tm.estimates - tm.f_true) / tm.f_true
        mean = err.mean(axis=0)
        se = err.std(axis=0, ddof=1) / np.sqrt(args.trials)
        print(f"{method:15s}", " ".join(f"t={t}:{m:.4f}+-{s:.4f}" for t, m, s in zip(steps, mean, se)))
        for j, t in enumerate(steps):
            rows.append({
                "method": method, "t": t,
                "fractional_error": float(mean[j]),
                "standard_error": float(se[j]),
                "trials": args.trials,
            })
    export_results(rows, args.out, "csv")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
