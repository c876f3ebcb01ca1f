"""Command-line interface: plan, simulate, bench and metrics subcommands.

Exit codes: 0 on success, 2 on validation errors (bad arguments or scenario
files), 3 on runtime failures inside the pipeline.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys

from . import harness as hz
from .control import ControlError, GainError
from .geometry import GeometryError
from .planner import PlannerError
from .voronoi import VoronoiError

_VALIDATION_ERRORS = (hz.ScenarioError, GainError, GeometryError)
_RUNTIME_ERRORS = (hz.HarnessError, PlannerError, ControlError, VoronoiError)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amplan",
                                description="whole-body planning and "
                                            "safety-critical control pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_mode=True):
        sp.add_argument("--scenario", required=True, action="append",
                        help="scenario file (repeatable for bench)")
        if with_mode:
            sp.add_argument("--mode", choices=("sq", "ellipse"), default="sq")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--dt", type=float, default=None,
                        help="override the control period [s]")
        sp.add_argument("--ns", type=int, default=None,
                        help="override the number of integration steps")

    common(sub.add_parser("plan", help="plan only; emit trajectory and diagram"))
    common(sub.add_parser("simulate", help="plan, simulate and emit everything"))
    bench = sub.add_parser("bench", help="run all scenarios in both modes")
    common(bench, with_mode=False)
    bench.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes")
    met = sub.add_parser("metrics", help="recompute metrics from emitted files")
    met.add_argument("--scenario", required=True, action="append")
    met.add_argument("--out", required=True,
                     help="directory holding trajectory.csv / telemetry.csv / "
                          "metrics.txt")
    return p


def _load(path, dt=None) -> hz.Scenario:
    s = hz.load_scenario(path)
    if dt is not None:
        if dt <= 0.0:
            raise hz.ScenarioError("dt: must be positive")
        s.dt = dt
    return s


def _cmd_plan(args) -> int:
    s = _load(args.scenario[0], args.dt)
    pr = hz.plan(s, args.mode, n_s=args.ns)
    report = hz.metrics(pr.traj, None, s, pr.plan_time)
    if args.out:
        hz.emit(args.out, pr.traj, None, report, pr.cells, pr.graph)
    print("\n".join(report.lines()))
    return 0


def _cmd_simulate(args) -> int:
    s = _load(args.scenario[0], args.dt)
    pr, tel, report = hz.run_pipeline(s, args.mode, n_s=args.ns, seed=args.seed)
    if args.out:
        hz.emit(args.out, pr.traj, tel, report, pr.cells, pr.graph)
    print("\n".join(report.lines()))
    return 0


def _bench_one(job):
    path, mode, out, seed, dt, ns = job
    s = _load(path, dt)
    pr, tel, report = hz.run_pipeline(s, mode, n_s=ns, seed=seed)
    if out:
        d = os.path.join(out, f"{s.name}-{mode}")
        hz.emit(d, pr.traj, tel, report, pr.cells, pr.graph)
    return (s.name, mode, report)


def _cmd_bench(args) -> int:
    jobs = [(path, mode, args.out, args.seed, args.dt, args.ns)
            for path in args.scenario for mode in ("sq", "ellipse")]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_bench_one, jobs))
    else:
        results = [_bench_one(j) for j in jobs]
    results.sort(key=lambda r: (r[0], r[1]))
    header = f"{'scenario':<12}{'mode':<9}{'plan_time':>10}{'min_dist':>10}" \
             f"{'arc_len':>9}{'jerkiness':>11}{'h_min':>8}{'infeas':>7}"
    print(header)
    for (name, mode, rep) in results:
        print(f"{name:<12}{mode:<9}{rep.plan_time:>10.3f}"
              f"{rep.min_distance:>10.4f}{rep.arc_length:>9.3f}"
              f"{rep.jerkiness:>11.3e}{rep.h_co_min:>8.3f}"
              f"{rep.infeasible_ticks:>7d}")
    return 0


def _cmd_metrics(args) -> int:
    s = hz.load_scenario(args.scenario[0])
    traj = hz.load_trajectory_csv(os.path.join(args.out, "trajectory.csv"))
    tel_path = os.path.join(args.out, "telemetry.csv")
    tel = hz.load_telemetry_csv(tel_path) if os.path.exists(tel_path) else None
    stored = hz.load_metrics(os.path.join(args.out, "metrics.txt"))
    report = hz.metrics(traj, tel, s, stored.plan_time)
    print("\n".join(report.lines()))
    return 0


_COMMANDS = {"plan": _cmd_plan, "simulate": _cmd_simulate,
             "bench": _cmd_bench, "metrics": _cmd_metrics}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
