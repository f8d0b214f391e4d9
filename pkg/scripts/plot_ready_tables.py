#!/usr/bin/env python3
"""Print the emitted experiment CSVs as aligned text tables.

Usage:
    python3 scripts/plot_ready_tables.py [RESULTS_DIR]

Convenience viewer for the CSV artifacts written by run_experiments.py;
plotting itself is left to external tooling.
"""

import csv
import sys
from pathlib import Path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    root = Path(argv[0]) if argv else Path("results")
    files = sorted(root.glob("*.csv"))
    if not files:
        print(f"no CSV files under {root}", file=sys.stderr)
        return 1
    for f in files:
        with open(f, newline="") as fh:
            rows = list(csv.reader(fh))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        print(f"\n== {f.name} ==")
        for r in rows:
            print("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
