#!/usr/bin/env python3
"""Desk-scale regular vs. hybrid comparison (configs/desk.cfg, seeds 1,2,3).

Uses a 10,000-image stratified CIFAR-10 subset when ``--cifar DIR`` is given
(or CIFAR10_DIR is set), otherwise the synthetic stand-in from desk.cfg.
Prints Table I/II and whether hybrid matched or beat regular on mean final
validation accuracy and took longer on mean wall time.

    python scripts/run_desk_replication.py --out runs/desk
"""

import argparse
import json
import os
from pathlib import Path

from hybridtrain.cli import main

DESK_CFG = Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"


def replicate(out, cifar_dir=None, seeds="1,2,3", jobs=1, verbose=False):
    """Run the comparison; returns (exit code, report dict)."""
    argv = ["compare", "--config", str(DESK_CFG), "--seeds", seeds, "--out", str(out), "--jobs", str(jobs)]
    if cifar_dir:
        argv += ["--data", f"cifar10:{cifar_dir}"]
    if verbose:
        argv.append("-v")
    code = main(argv)
    report_path = Path(out) / "report.json"
    report = json.loads(report_path.read_text()) if report_path.exists() else None
    return code, report


def verdict(report):
    s = report["summary"]
    return {
        "hybrid_val": s["hybrid"]["val_acc"][0],
        "regular_val": s["regular"]["val_acc"][0],
        "hybrid_wall": s["hybrid"]["wall_s"][0],
        "regular_wall": s["regular"]["wall_s"][0],
        "accuracy_ok": s["hybrid"]["val_acc"][0] >= s["regular"]["val_acc"][0],
        "cost_ok": s["hybrid"]["wall_s"][0] > s["regular"]["wall_s"][0],
    }


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--cifar", default=os.environ.get("CIFAR10_DIR"))
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args()
    code, report = replicate(a.out, a.cifar, a.seeds, a.jobs, a.verbose)
    if report is None:
        raise SystemExit(code)
    v = verdict(report)
    print(f"\nhybrid mean val {v['hybrid_val']:.4f} vs regular {v['regular_val']:.4f}: "
          f"{'ok' if v['accuracy_ok'] else 'NOT MET'}")
    print(f"hybrid mean wall {v['hybrid_wall']:.1f}s vs regular {v['regular_wall']:.1f}s: "
          f"{'ok' if v['cost_ok'] else 'NOT MET'}")
    raise SystemExit(code)
