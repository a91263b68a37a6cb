#!/usr/bin/env python3
"""Recompute a comparison summary straight from the per-run metrics CSVs.

Reads <out>/seed_*/{regular,hybrid}/metrics.csv and prints JSON with the mean
and sample standard deviation of final validation accuracy, final test accuracy
and total wall time per method. Deliberately uses only the standard library so
it can cross-check report.json independently of the package.

    python scripts/aggregate_runs.py runs/compare
"""

import csv
import json
import statistics
import sys
from pathlib import Path


def mean_std(xs):
    xs = list(xs)
    return [statistics.fmean(xs), statistics.stdev(xs) if len(xs) > 1 else 0.0]


def aggregate(out_dir):
    out = {}
    for method in ("regular", "hybrid"):
        finals, tests, walls = [], [], []
        for path in sorted(Path(out_dir).glob(f"seed_*/{method}/metrics.csv")):
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            finals.append(float(rows[-1]["val_acc"]))
            tests.append(float(rows[-1]["test_acc"]))
            walls.append(sum(float(r["wall_s"]) for r in rows))
        if finals:
            out[method] = {"val_acc": mean_std(finals), "test_acc": mean_std(tests), "wall_s": mean_std(walls),
                           "n_runs": len(finals)}
    return out


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    print(json.dumps(aggregate(sys.argv[1]), indent=2))
