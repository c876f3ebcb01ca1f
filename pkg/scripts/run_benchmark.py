#!/usr/bin/env python3
"""Run every shipped scenario in both obstacle models and print a summary table.

Usage: python3 scripts/run_benchmark.py [--out DIR] [--jobs N]
"""

import argparse
import glob
import os
import sys

from amplan import cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args()

    root = os.path.join(os.path.dirname(__file__), "..", "scenarios")
    paths = sorted(glob.glob(os.path.join(root, "*.yaml")))
    if not paths:
        print("no scenario files found", file=sys.stderr)
        return 2
    argv = ["bench", "--jobs", str(args.jobs)]
    for path in paths:
        argv += ["--scenario", path]
    if args.out:
        argv += ["--out", args.out]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())
