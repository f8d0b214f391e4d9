#!/usr/bin/env python3
"""Run the benchmark studies on a bundled or user-supplied system.

Usage:
    python3 scripts/run_experiments.py [--input SYSTEM] [--out DIR]
                                       [--only NAME ...] [--gap F]

Writes one figure-ready CSV per study into the output directory.
"""

import argparse
import sys
import time

from mgsched.datasets import example_path
from mgsched.grid_model import load_system
from mgsched.scheduler import ScheduleOptions
from mgsched.validation import EXPERIMENTS, experiment_suite


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--input", default=None,
                    help="system JSON/TOML (default: bundled island_small)")
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--only", nargs="*", default=None, choices=EXPERIMENTS,
                    help="subset of studies to run (default: all)")
    ap.add_argument("--gap", type=float, default=2e-3,
                    help="relative optimality gap tolerance")
    args = ap.parse_args(argv)

    system = load_system(args.input or example_path("island_small"))
    options = ScheduleOptions(gap=args.gap)
    for name in args.only or EXPERIMENTS:
        t0 = time.time()
        print(f"== {name} ==")
        experiment_suite(name, system, out_dir=args.out,
                         base_options=options, log=print)
        print(f"   done in {time.time() - t0:.1f}s -> {args.out}/{name}.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
