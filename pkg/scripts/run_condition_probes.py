#!/usr/bin/env python3
"""Optimality-condition and perturbation probes for the built-in families.

Solves each family, polishes the KKT triple, then runs the constraint
qualification and second-order checks, the calmness probe and the error-bound
fit; artifacts land in per-family subdirectories of --out.
"""
import argparse
import sys

from ralm.cli import main as cli_main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/conditions")
    ap.add_argument("--families", default="circle,sphere-l1,rmc")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    worst = 0
    for family in args.families.split(","):
        print(f"== {family}")
        code = cli_main(
            [
                "analyze",
                "--family",
                family,
                "--out",
                f"{args.out}/{family}",
                "--jobs",
                str(args.jobs),
            ]
        )
        with open(f"{args.out}/{family}/summary.txt", encoding="utf-8") as fh:
            print(fh.read())
        worst = max(worst, code)
    sys.exit(worst)
