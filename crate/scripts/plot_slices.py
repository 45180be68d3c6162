#!/usr/bin/env python3
"""Plot exact vs predicted profiles from a run's slices.csv."""
import argparse
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("slices", help="slices.csv written by `gkdv train`")
    ap.add_argument("-o", "--output", default="slices.png")
    args = ap.parse_args()

    by_t = defaultdict(lambda: ([], [], []))
    with open(args.slices, newline="") as f:
        for row in csv.DictReader(f):
            xs, ex, pr = by_t[float(row["t"])]
            xs.append(float(row["x"]))
            ex.append(float(row["exact"]))
            pr.append(float(row["predicted"]))

    times = sorted(by_t)
    fig, axes = plt.subplots(1, len(times), figsize=(4 * len(times), 3), sharey=True)
    for ax, t in zip(axes if len(times) > 1 else [axes], times):
        xs, ex, pr = by_t[t]
        ax.plot(xs, ex, "k-", lw=1.5, label="exact")
        ax.plot(xs, pr, "r--", lw=1.2, label="PINN")
        ax.set_title(f"t = {t:g}")
        ax.set_xlabel("x")
    axes[0].legend() if len(times) > 1 else axes.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
