#!/usr/bin/env python3
"""Sweep the weighting schemes on the clustered pool and tabulate errors.

Paired trials: every scheme sees the same sampled trajectories, so the
relative columns isolate the weighting effect.
"""

import argparse

import numpy as np

from active_measure.simharness import ExperimentConfig, export_results, run_trials

POOL = dict(
    pool_kind="clustered", pool_n=100, pool_seed=11, pool_clusters=3,
    pool_amplitude=30.0, pool_base=0.5, clamp="floor", clamp_value=0.5,
    predictor="improving", sigma0=1.5, rate=1.0, bias=1.0,
)
SCHEMES = (("sqrt", None), ("lure", None), ("comb", None), ("inv", 0.3), ("inv", 0.5), ("inv", 0.9))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=14000)
    parser.add_argument("--steps", default="5,10,30,50,70")
    parser.add_argument("--out", default="weighting_results.csv")
    args = parser.parse_args()

    steps = tuple(int(s) for s in args.steps.split(","))
    errors = {}
    for kind, gamma in SCHEMES:
        cfg = ExperimentConfig(
            method="active", weights=kind, gamma=gamma, steps=steps,
            trials=args.trials, seed=args.seed, track_variance=(kind == "inv"), **POOL,
        )
        _, tm = run_trials(cfg, collect=True)
        label = f"inv({gamma})" if kind == "inv" else kind
        errors[label] = np.abs(tm.estimates - tm.f_true) / tm.f_true
        print(f"{label:9s} mean fractional error:",
              " ".join(f"t={t}:{e:.4f}" for t, e in zip(steps, errors[label].mean(axis=0))))

    comb = errors["comb"].mean(axis=0)
    rows = []
    for label, err in errors.items():
        mean = err.mean(axis=0)
        for j, t in enumerate(steps):
            rows.append({
                "scheme": label, "t": t,
                "fractional_error": float(mean[j]),
                "relative_to_comb": float(mean[j] / comb[j]),
                "trials": args.trials,
            })
    export_results(rows, args.out, "csv")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
