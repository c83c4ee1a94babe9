#!/usr/bin/env python3
"""Tabulate interval coverage and relative radius for both variance estimators."""

import argparse

import numpy as np

from active_measure.simharness import ExperimentConfig, coverage, export_results, run_trials
from active_measure.variance import inverse_normal_cdf

POOL = dict(
    pool_kind="clustered", pool_n=50, pool_seed=7, pool_clusters=3,
    pool_amplitude=20.0, pool_base=0.5, clamp="floor", clamp_value=0.5,
    predictor="noisy", bias=1.2, sigma=0.2,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=5000)
    parser.add_argument("--seed", type=int, default=15000)
    parser.add_argument("--weights", default="lure")
    parser.add_argument("--level", type=float, default=0.95)
    parser.add_argument("--steps", default="15,20,25,30,35,40")
    parser.add_argument("--out", default="coverage_results.csv")
    args = parser.parse_args()

    steps = tuple(int(s) for s in args.steps.split(","))
    cfg = ExperimentConfig(
        method="active", weights=args.weights, steps=steps, trials=args.trials,
        seed=args.seed, level=args.level, track_variance=True, **POOL,
    )
    _, tm = run_trials(cfg, collect=True)
    z = inverse_normal_cdf(0.5 + args.level / 2.0)
    rows = []
    for j, t in enumerate(steps):
        row = {
            "t": t,
            "coverage_cond": coverage(tm.estimates[:, j], tm.var_cond[:, j], tm.f_true, args.level),
            "coverage_simp": coverage(tm.estimates[:, j], tm.var_simp[:, j], tm.f_true, args.level),
            "radius_cond_rel": float(np.mean(z * np.sqrt(tm.var_cond[:, j])) / tm.f_true),
            "radius_simp_rel": float(np.mean(z * np.sqrt(tm.var_simp[:, j])) / tm.f_true),
            "trials": args.trials,
        }
        rows.append(row)
        print(f"t={t}: cond={row['coverage_cond']:.3f} simp={row['coverage_simp']:.3f} "
              f"radius(cond)={row['radius_cond_rel']:.4f}")
    export_results(rows, args.out, "csv")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
