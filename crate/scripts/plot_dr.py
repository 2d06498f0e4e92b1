"""Plot distortion-rate CSVs written by `bench dr-vector` / `bench dr-ip`."""

import argparse
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("--out", default="dr.png")
    args = ap.parse_args()

    rows = list(csv.DictReader(open(args.csv)))
    curves = defaultdict(list)
    for r in rows:
        curves[r["scheme"]].append((float(r["rate_bits"]), float(r["distortion"])))

    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme, pts in sorted(curves.items()):
        pts.sort()
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], "o-", label=scheme)

    rates = [float(r["rate_bits"]) for r in rows]
    grid = np.linspace(min(rates) - 0.25, max(rates) + 0.25, 200)
    # the reference column is 2^(-2R) for vector runs
    inner_product = any(
        abs(float(r["shannon_or_gamma_ref"]) - 2.0 ** (-2 * float(r["rate_bits"]))) > 1e-15
        for r in rows
        if r["shannon_or_gamma_ref"] != "NaN"
    )
    if inner_product:
        t = 2.0 ** (-2 * grid)
        ax.semilogy(grid, 2 * t - t * t, "k--", label="Gamma(R)")
    else:
        ax.semilogy(grid, 2.0 ** (-2 * grid), "k--", label="2^(-2R)")
    ax.set_xlabel("rate (bits/dimension)")
    ax.set_ylabel("distortion")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
