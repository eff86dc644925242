#!/usr/bin/env python3
"""Run the three-way accuracy/runtime comparison on the default synthetic
world and print the table (thin wrapper over `ngslam compare`).

Usage:
  python scripts/benchmark_synthetic.py [--repeats 5] [--seed 0]
"""

import argparse
import sys

sys.path.insert(0, __file__.rsplit("/scripts/", 1)[0] + "/src")

from ngslam.cli import main as cli_main  # noqa: E402


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--particles", type=int, default=10)
    args = ap.parse_args(argv)
    return cli_main(
        [
            "compare",
            "--algos", "ekf,ufastslam,nano",
            "--synthetic", "default",
            "--repeats", str(args.repeats),
            "--seed", str(args.seed),
            "--particles", str(args.particles),
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
