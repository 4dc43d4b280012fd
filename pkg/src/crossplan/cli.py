"""Command line front end.

Subcommands:

* ``plan``      schedule a scenario, no execution
* ``refine``    adjust granted trajectories around the scenario obstacles
* ``simulate``  closed loop: schedule, refine, then track under noise
* ``bench``     timing sweeps (kernels, scheduler, refiner)
* ``compare``   run both reservation strategies on one scenario

``plan``, ``simulate`` and ``compare`` exit 0 only when every vehicle got a
slot and execution (where it happens) recorded zero collisions; ``refine``
exits 0 only when every affected vehicle found a feasible adjustment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import _kernels
from . import scheduler as hl
from .bench import format_report, run_bench
from .refine import refine
from .scenario import load_scenario
from .simulate import (_blocks_hit, _obstacle_bits, export, run_experiment,
                       sched_ledger)


def _load(args):
    sc = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    return sc


def _schedule(sc, strategy: str, threads: int):
    strat = hl.STRATEGY_BLOCKS if strategy == "proposed" else hl.STRATEGY_WHOLE_ZONE
    lib = sc.make_library()
    return hl.run(sc.make_requests(), sc.grid, lib, sc.priority, sc.rate_av,
                  strategy=strat, threads=threads), lib


def _print_schedule(sched, n_requested: int):
    print(f"strategy={sched.strategy} scheduled={len(sched.allocations)}"
          f"/{n_requested} makespan={sched.makespan_time:.3f}s"
          f" last_exit={sched.last_exit:.3f}s"
          f" round_ms_max={max(sched.per_round_ms, default=0.0):.3f}")
    print(f"{'id':>4} {'road':>4} {'maneuver':>9} {'arrival':>8} {'entry':>8}"
          f" {'exit':>8} {'wait':>7} {'score':>9}")
    for a in sorted(sched.allocations, key=lambda a: a.entry_time):
        r = a.request
        print(f"{r.vehicle_id:>4} {r.road:>4} {r.maneuver.name.lower():>9}"
              f" {r.arrival_time:>8.3f} {a.entry_time:>8.3f}"
              f" {a.exit_time:>8.3f} {a.wa_wait:>7.3f} {a.score.score:>9.4f}")


def cmd_plan(args) -> int:
    sc = _load(args)
    requests = sc.make_requests()
    sched, _ = _schedule(sc, args.strategy, args.threads)
    _print_schedule(sched, len(requests))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "schedule.csv")
        hl.schedule_to_csv(sched, path)
        print(f"wrote {path}")
    return 0 if sched.all_scheduled(requests) else 1


def cmd_refine(args) -> int:
    sc = _load(args)
    if not sc.obstacles:
        print("scenario declares no obstacles; nothing to refine")
        return 0
    sched, _ = _schedule(sc, args.strategy, args.threads)
    obs_row = _obstacle_bits(sc.grid, sc.obstacles)
    ledger = sched_ledger(sched, sc.grid)
    rs = sc.refine

    failures = 0
    touched = 0
    for alloc in sched.allocations:
        if not _blocks_hit(alloc.occupancy, obs_row):
            continue
        touched += 1
        vid = alloc.request.vehicle_id
        tunnel = hl.feasible_tunnel(alloc, rs.margin_cells, ledger)
        res = refine(alloc.trajectory, tunnel, sc.obstacles, sc.vehicle,
                     weights=rs.weights, collision=rs.collision,
                     knot_dt=rs.knot_dt, max_restarts=rs.max_restarts)
        status = "ok" if res.success else f"FAILED ({res.message})"
        print(f"vehicle {vid}: {status}, {res.iterations} iterations,"
              f" {res.restarts} restarts, {res.pair_count} pairs,"
              f" {res.wall_ms:.1f} ms")
        if not res.success:
            failures += 1
            continue
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, f"refined_{vid:03d}.csv")
            spline = res.spline
            ts = np.arange(0.0, spline.duration + 1e-9, 0.02)
            pos = spline.value(ts)
            speed = np.hypot(*spline.derivative(ts, 1).T)
            with open(path, "w") as fh:
                fh.write("t,x,y,v\n")
                for t, p, v in zip(ts, pos, speed):
                    fh.write(f"{t:.6f},{p[0]:.6f},{p[1]:.6f},{v:.6f}\n")
            print(f"wrote {path}")
    if touched == 0:
        print("no granted occupancy meets an obstacle; nothing to refine")
    return 0 if failures == 0 else 1


def cmd_simulate(args) -> int:
    sc = _load(args)
    result = run_experiment(sc, strategy=args.strategy, threads=args.threads)
    for key, val in result.metrics.summary().items():
        print(f"{key}: {val}")
    for inc in result.metrics.incidents:
        print(f"incident: vehicle {inc.vehicle_id} {inc.kind}"
              f" at t={inc.time:.3f} {inc.detail}")
    if args.out:
        written = export(result, args.out)
        print(f"wrote {len(written)} files under {args.out}")
    return 0 if result.metrics.clean else 1


def cmd_bench(args) -> int:
    report = run_bench(seed=args.seed if args.seed is not None else 1,
                       threads=args.threads)
    print(format_report(report))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "bench.json")
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    sc = _load(args)
    results = {}
    for strategy in ("proposed", "cs"):
        results[strategy] = run_experiment(sc, strategy=strategy,
                                           threads=args.threads)
    summaries = {k: r.metrics.summary() for k, r in results.items()}
    keys = list(summaries["proposed"])
    width = max(len(k) for k in keys)
    print(f"{'metric':<{width}} {'proposed':>14} {'cs':>14}")
    for k in keys:
        a, b = summaries["proposed"][k], summaries["cs"][k]
        print(f"{k:<{width}} {a!s:>14} {b!s:>14}")
    pt_p = summaries["proposed"]["passing_time_s"]
    pt_c = summaries["cs"]["passing_time_s"]
    if pt_c > 0:
        print(f"passing time improvement: {100.0 * (pt_c - pt_p) / pt_c:.1f}%"
              f" ({pt_c - pt_p:+.3f}s vs cs)")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for strategy, result in results.items():
            export(result, os.path.join(args.out, strategy))
        path = os.path.join(args.out, "compare.json")
        with open(path, "w") as fh:
            json.dump(summaries, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {path}")
    return 0 if all(r.metrics.clean for r in results.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossplan",
        description="Space-time block scheduling and trajectory refinement "
                    "for a four-road autonomous intersection.")
    parser.add_argument("--version", action="version",
                        version=f"crossplan ({_kernels.implementation_name()} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True, strategy=True):
        if scenario:
            p.add_argument("--scenario", required=True,
                           help="scenario YAML file")
        if strategy:
            p.add_argument("--strategy", choices=("proposed", "cs"),
                           default="proposed",
                           help="reservation strategy (default: proposed)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="candidate evaluation threads (default: 1)")

    p = sub.add_parser("plan", help="schedule only, print the grant table")
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("refine",
                       help="adjust granted trajectories around obstacles")
    common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("simulate", help="closed-loop run under noise")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="timing sweeps")
    common(p, scenario=False, strategy=False)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare",
                       help="both strategies on one scenario, side by side")
    common(p, strategy=False)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
