#!/usr/bin/env python3
"""Fixed-penalty rate study on the circle instance.

Runs the solver with penalty growth disabled for rho in {1, 10, 100, 1000},
writes figure1.csv / figure1.gp / summary.txt into --out, and prints the
fitted log-linear tail slopes.
"""
import argparse
import sys
from pathlib import Path

from ralm.cli import main as cli_main


def run(out_dir: str) -> int:
    code = cli_main(["figure1", "--out", out_dir])
    summary = Path(out_dir) / "summary.txt"
    if summary.exists():
        print(summary.read_text())
    return code


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/rate_study")
    args = ap.parse_args()
    sys.exit(run(args.out))
