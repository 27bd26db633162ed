#!/usr/bin/env python3
"""Sweep the two-asset model grid and print where shorts become accretive.

Writes the sweep CSV + threshold report into --out (default ./out/toy) and
prints a small table of the ratio against the short loading for each
residual-variance level.
"""

import argparse
import csv
import os
import sys

from factorlab import cli


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/toy")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    cfg_path = os.path.join(args.out, "toy_sweep.cfg")
    with open(cfg_path, "w") as fh:
        fh.write(
            "[toy]\n"
            "alpha2 = 0.0 0.1 0.2 0.3 0.41421356237309515 0.5 0.7 1.0 1.5 2.0\n"
            "gamma = 0.1 1 10\n"
            "kappa = 1\n"
        )
    rc = cli.main(["toy", "--config", cfg_path, "--out", args.out])
    if rc != 0:
        return rc

    with open(os.path.join(args.out, "toy_sweep.csv")) as fh:
        rows = list(csv.DictReader(fh))
    gammas = sorted({row["gamma"] for row in rows}, key=float)
    print(f"{'alpha2':>10} " + " ".join(f"g={g:>6}" for g in gammas))
    alphas = sorted({row["alpha2"] for row in rows}, key=float)
    for a in alphas:
        cells = []
        for g in gammas:
            (row,) = [r for r in rows if r["alpha2"] == a and r["gamma"] == g]
            cells.append(f"{float(row['ratio']):8.4f}")
        marker = " <- threshold" if a.startswith("0.41421356") else ""
        print(f"{float(a):10.4f} " + " ".join(cells) + marker)
    print(f"\nfiles in {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
