#!/usr/bin/env python3
"""Write a live-mode demo pool (and a matching prediction table) for the console.

Each unit's payload tells the labeler what count to enter, so a demo session
with the generated predictions shows the zero-variance behavior: every
interval collapses onto the exact running total.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from active_measure.pool import Unit, UnitPool, write_pool


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="demo_pools")
    parser.add_argument("--units", type=int, default=24)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    counts = rng.integers(0, 9, size=args.units)
    units = [
        Unit(f"u{i:03d}", f"demo tile {i}: enter the count {int(c)}", None)
        for i, c in enumerate(counts)
    ]
    write_pool(UnitPool(units), out / "demo.pool")
    predictions = {f"u{i:03d}": float(c) for i, c in enumerate(counts)}
    (out / "demo_predictions.json").write_text(json.dumps(predictions, indent=2), encoding="utf-8")
    print(f"wrote {out / 'demo.pool'} ({args.units} units) and demo_predictions.json")
    print("serve with: active-measure serve --pools", out, "--ui frontend/dist")


if __name__ == "__main__":
    main()
