#!/usr/bin/env python3
"""Plan and fly one scenario end to end, then emit all artifacts.

Usage: python3 scripts/run_mission.py scenarios/tree.yaml --mode sq --out out/tree
"""

import argparse
import sys

from amplan import harness as hz


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("scenario")
    p.add_argument("--mode", choices=("sq", "ellipse"), default="sq")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args()

    s = hz.load_scenario(args.scenario)
    pr, tel, report = hz.run_pipeline(s, args.mode, seed=args.seed)
    if args.out:
        hz.emit(args.out, pr.traj, tel, report, pr.cells, pr.graph)
        print(f"artifacts written to {args.out}")
    print("\n".join(report.lines()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
