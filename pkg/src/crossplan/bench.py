"""Timing sweeps.

Three sections: the grid kernels measured against both implementations
(compiled extension and numpy fallback) on identical workloads, the
scheduler end to end over growing request batches, and the trajectory
refiner on representative obstacle cases. ``run_bench`` returns a plain
dict ready for JSON; ``format_report`` renders it for terminals.
"""

from __future__ import annotations

import math
import time
from statistics import mean

import numpy as np

from . import _kernels
from ._kernels import pure
from .geometry import IntersectionConfig, Maneuver
from .grid import GridSpec, occupancy_sample_step, trajectory_occupancy
from .refine import BoxObstacle, refine
from .scenario import FLOW_MIXES, generate_flow
from .scheduler import (MotionRequest, PriorityWeights, TrajectoryLibrary,
                        feasible_tunnel, run)
from .simulate import sched_ledger
from .vehicle import VehicleSpec

try:
    from ._kernels import _gridcore
except ImportError:
    _gridcore = None


def _repeat(fn, repeats: int) -> dict:
    """Best and mean wall time of fn() over `repeats` calls, in ms."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return {"best_ms": round(min(times), 4), "mean_ms": round(mean(times), 4)}


def _kernel_workload():
    """Fixed inputs shared by every kernel implementation under test."""
    config = IntersectionConfig()
    vspec = VehicleSpec()
    grid = GridSpec.for_intersection(config)
    lib = TrajectoryLibrary(config, vspec, 8.0)

    poses = []
    for road in (1, 2, 3, 4):
        traj = lib.trajectory(road, Maneuver.LEFT)
        step = occupancy_sample_step(grid, vspec.v_max)
        for k in range(int(traj.duration / step) + 1):
            x, y, th = traj.occupancy_pose(min(k * step, traj.duration))
            poses.append((x, y, math.cos(th), math.sin(th)))

    ledger_bits = np.zeros((64, grid.words), dtype=np.uint64)
    entry = 2.2
    for road in (1, 2, 3, 4):
        occ = trajectory_occupancy(lib.trajectory(road, Maneuver.LEFT), vspec,
                                   grid, entry)
        ledger_bits[occ.jt_lo - 1:occ.jt_lo - 1 + occ.n_slabs] |= occ.bits
        entry += 1.2
    cand = trajectory_occupancy(lib.trajectory(1, Maneuver.STRAIGHT), vspec,
                                grid, 0.0)
    return grid, vspec, poses, ledger_bits, cand


def bench_kernels(repeats: int = 5) -> list:
    """Same workload through the numpy kernels and, when built, the
    compiled ones; one row per (kernel, implementation)."""
    grid, vspec, poses, ledger_bits, cand = _kernel_workload()
    impls = [("pure", pure)]
    if _gridcore is not None:
        impls.append(("compiled", _gridcore))

    rows = []
    row_buf = np.zeros(grid.words, dtype=np.uint64)

    for label, mod in impls:
        def cover():
            for x, y, ct, st in poses:
                row_buf.fill(0)
                mod.rect_cover_bits(x, y, ct, st, vspec.half_len,
                                    vspec.half_wid, grid.x0, grid.y0, grid.dx,
                                    grid.dy, grid.nx, grid.ny, row_buf)
        timing = _repeat(cover, repeats)
        rows.append({"section": "kernels", "name": "rect_cover_bits",
                     "impl": label, "calls": len(poses), **timing})

        def shift():
            for _ in range(50):
                mod.first_disjoint_shift(cand.bits, cand.jt_lo, ledger_bits, 1)
        timing = _repeat(shift, repeats)
        rows.append({"section": "kernels", "name": "first_disjoint_shift",
                     "impl": label, "calls": 50, **timing})

        def overlap():
            for k in range(200):
                mod.any_overlap(cand.bits, cand.jt_lo + k % 40, ledger_bits, 1)
        timing = _repeat(overlap, repeats)
        rows.append({"section": "kernels", "name": "any_overlap",
                     "impl": label, "calls": 200, **timing})

    by_name: dict = {}
    for r in rows:
        by_name.setdefault(r["name"], {})[r["impl"]] = r["best_ms"]
    for name, t in by_name.items():
        if "compiled" in t and t["compiled"] > 0:
            for r in rows:
                if r["name"] == name and r["impl"] == "compiled":
                    r["speedup_vs_pure"] = round(t["pure"] / t["compiled"], 2)
    return rows


def bench_scheduler(sizes=(10, 20, 40), seed: int = 1,
                    threads: int = 1) -> list:
    """Full schedules over mixed Poisson batches of growing size."""
    config = IntersectionConfig()
    vspec = VehicleSpec()
    grid = GridSpec.for_intersection(config)
    lib = TrajectoryLibrary(config, vspec, 8.0)
    lib.warm(grid)

    rows = []
    for n in sizes:
        reqs = generate_flow(FLOW_MIXES["flow2"], n, 0.8, seed)
        t0 = time.perf_counter()
        res = run(reqs, grid, lib, PriorityWeights(), threads=threads)
        total_ms = (time.perf_counter() - t0) * 1e3
        rows.append({
            "section": "scheduler", "name": f"schedule_{n}",
            "impl": _kernels.implementation_name(), "vehicles": n,
            "scheduled": len(res.allocations),
            "total_ms": round(total_ms, 3),
            "round_ms_max": round(max(res.per_round_ms), 3),
            "round_ms_mean": round(mean(res.per_round_ms), 3),
            "makespan_s": round(res.makespan_time, 3),
        })
    return rows


def bench_refine(repeats: int = 3) -> list:
    """Refiner wall time on single-obstacle cases, one row per maneuver."""
    config = IntersectionConfig()
    vspec = VehicleSpec()
    grid = GridSpec.for_intersection(config)
    lib = TrajectoryLibrary(config, vspec, 8.0)

    cases = [
        ("straight_dodge", 1, Maneuver.STRAIGHT, BoxObstacle(0.0, -0.3, 0.0, 0.3, 0.3)),
        ("left_dodge", 1, Maneuver.LEFT, BoxObstacle(-2.2, 1.0, 0.0, 0.3, 0.3)),
    ]
    rows = []
    for name, road, mv, obs in cases:
        req = MotionRequest(1, road, mv, 0.0)
        sched = run([req], grid, lib, PriorityWeights())
        alloc = sched.allocations[0]
        tunnel = feasible_tunnel(alloc, 3, sched_ledger(sched, grid))

        wall = []
        result = None
        for _ in range(repeats):
            result = refine(alloc.trajectory, tunnel, [obs], vspec)
            wall.append(result.wall_ms)
        n_ctrl = result.spline.control.shape[0] if result.spline is not None else 0
        rows.append({
            "section": "refine", "name": name,
            "impl": _kernels.implementation_name(),
            "control_points": n_ctrl, "pairs": result.pair_count,
            "success": result.success, "iterations": result.iterations,
            "best_ms": round(min(wall), 3), "mean_ms": round(mean(wall), 3),
        })
    return rows


def run_bench(kernel_repeats: int = 5, sizes=(10, 20, 40), seed: int = 1,
              threads: int = 1, refine_repeats: int = 3) -> dict:
    return {
        "active_implementation": _kernels.implementation_name(),
        "compiled_available": _gridcore is not None,
        "rows": (bench_kernels(kernel_repeats)
                 + bench_scheduler(sizes, seed, threads)
                 + bench_refine(refine_repeats)),
    }


def format_report(report: dict) -> str:
    lines = [
        f"active implementation: {report['active_implementation']}"
        + ("" if report["compiled_available"] else
           "  (compiled extension not built)"),
        "",
    ]
    section = None
    for r in report["rows"]:
        if r["section"] != section:
            section = r["section"]
            lines.append(f"[{section}]")
        detail = ", ".join(f"{k}={v}" for k, v in r.items()
                           if k not in ("section", "name", "impl"))
        lines.append(f"  {r['name']:<22} {r['impl']:<9} {detail}")
    return "\n".join(lines)
