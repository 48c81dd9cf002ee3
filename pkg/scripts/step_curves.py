"""Pivot a synth1 results.csv into one row per step (plot-ready step curves).

    python scripts/step_curves.py results/synth1/results.csv > step_curves.csv
"""
import csv
import sys
from collections import defaultdict


def pivot(path):
    table = defaultdict(dict)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            table[int(row["step"])][row["model"]] = (row["mean"], row["std"])
    models = sorted({m for v in table.values() for m in v})
    w = csv.writer(sys.stdout)
    w.writerow(["step"] + [f"{m}_{s}" for m in models for s in ("mean", "std")])
    for step in sorted(table):
        w.writerow([step] + [x for m in models for x in table[step].get(m, ("", ""))])


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    pivot(sys.argv[1])
