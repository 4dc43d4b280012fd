"""Closed-loop simulation: schedule, refine, then drive.

The coordinator side runs first (it is event driven in its own decision
clock): all arrivals are scheduled, tunnels built, and any trajectory whose
blocks touch an obstacle is refined. Execution then replays the grants with
a kinematic bicycle per vehicle, a feedforward plus proportional tracking
controller fed a noisy measured pose, and noisy actuation. Safety is judged
on what was driven, not what was planned: raw body rectangles are checked
pairwise each step and rasterized per slab for a block-level overlap audit.

Vehicles queue abstractly in the waiting area; physical motion starts when
a grant's buffer ramp begins, at the buffer entrance, from standstill.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import scheduler as hl
from ._kernels import rect_cover_cells
from .geometry import IntersectionConfig
from .grid import (GridSpec, ReservationLedger, cells_to_bits, footprint_bits,
                   occupancy_to_csv)
from .refine import BoxObstacle, RefineResult, rects_overlap, refine
from .scenario import Scenario
from .vehicle import (ControlInput, VehicleSpec, VehicleState, perturb_control,
                      perturb_pose, step)

SIM_DT = 0.02

# tracking gains: feedforward does the work, feedback trims noise
GAIN_SPEED = 2.0
GAIN_ALONG = 1.5
GAIN_HEADING = 1.5
GAIN_LATERAL = 0.6


@dataclass(frozen=True)
class Incident:
    vehicle_id: int
    kind: str                 # collision | held | timeout
    time: float
    detail: str = ""


@dataclass
class Metrics:
    vehicles_requested: int = 0
    vehicles_scheduled: int = 0
    vehicles_passed: int = 0
    passing_time: float = 0.0          # executed: last body clear of the zone
    planned_makespan: float = 0.0
    waits: dict = field(default_factory=dict)
    hl_round_ms: list = field(default_factory=list)
    ll_ms: list = field(default_factory=list)
    queue_trace: list = field(default_factory=list)
    collision_count: int = 0
    incidents: list = field(default_factory=list)
    score_breakdown: list = field(default_factory=list)
    max_tracking_error: float = 0.0
    min_pair_distance: float = math.inf

    @property
    def all_scheduled(self) -> bool:
        return self.vehicles_scheduled == self.vehicles_requested

    @property
    def clean(self) -> bool:
        return self.collision_count == 0 and self.all_scheduled

    def summary(self) -> dict:
        hl_ms = self.hl_round_ms or [0.0]
        return {
            "vehicles_requested": self.vehicles_requested,
            "vehicles_scheduled": self.vehicles_scheduled,
            "vehicles_passed": self.vehicles_passed,
            "passing_time_s": round(self.passing_time, 6),
            "planned_makespan_s": round(self.planned_makespan, 6),
            "mean_wait_s": round(float(np.mean(list(self.waits.values())))
                                 if self.waits else 0.0, 6),
            "max_wait_s": round(max(self.waits.values(), default=0.0), 6),
            "hl_round_ms_max": round(max(hl_ms), 3),
            "hl_round_ms_mean": round(float(np.mean(hl_ms)), 3),
            "ll_ms_max": round(max(self.ll_ms), 3) if self.ll_ms else 0.0,
            "collision_count": self.collision_count,
            "incident_count": len(self.incidents),
            "max_tracking_error_m": round(self.max_tracking_error, 6),
            "min_pair_distance_m": (round(self.min_pair_distance, 6)
                                    if math.isfinite(self.min_pair_distance)
                                    else None),
        }


@dataclass
class VehicleLog:
    vehicle_id: int
    rows: list = field(default_factory=list)   # (t, x, y, theta, v)


@dataclass
class SimulationResult:
    scenario: Scenario
    strategy: str
    metrics: Metrics
    schedule: hl.ScheduleResult
    logs: dict = field(default_factory=dict)
    refined: dict = field(default_factory=dict)


def _obstacle_bits(grid: GridSpec, obstacles) -> np.ndarray:
    row = np.zeros(grid.words, dtype=np.uint64)
    for obs in obstacles:
        cells = rect_cover_cells(obs.cx, obs.cy, math.cos(obs.heading),
                                 math.sin(obs.heading), obs.half_len,
                                 obs.half_wid, grid.x0, grid.y0, grid.dx,
                                 grid.dy, grid.nx, grid.ny)
        row |= cells_to_bits(cells, grid)
    return row


def _blocks_hit(occ, obs_row: np.ndarray) -> bool:
    for i in range(occ.n_slabs):
        if (occ.bits[i] & obs_row).any():
            return True
    return False


class _Drive:
    """Execution plan of one granted vehicle: ramp, crossing, departure."""

    def __init__(self, alloc: hl.Allocation, config: IntersectionConfig,
                 vspec: VehicleSpec, refined: RefineResult | None):
        self.alloc = alloc
        self.vid = alloc.request.vehicle_id
        self.vspec = vspec
        self.start = alloc.start_time
        self.entry = alloc.entry_time
        traj = alloc.trajectory
        self.traj = traj
        self.spline = refined.spline if refined is not None else None
        self.cross_T = (self.spline.duration if self.spline is not None
                        else traj.duration)
        road = alloc.request.road
        ex, ey, self.head_in = config.entry_pose(road)
        self.lane_in = (ex, ey)
        xo, yo, tho = traj.sample_pose(traj.duration)
        self.exit_pose = (xo, yo, tho)
        self.v_exit = traj.v_exit
        clear = vspec.length / 2.0 + vspec.r_long
        self.depart_T = (clear + 2.0) / max(self.v_exit, 0.5)
        self.end = self.entry + self.cross_T + self.depart_T

    def target(self, t: float):
        """(x, y, theta, v, a_ff, kappa) of the plan at absolute time t."""
        if t < self.entry:
            tau = max(t - self.start, 0.0)
            buf = self.alloc.buffer
            s = float(buf.s(min(tau, buf.horizon)))
            upstream = max(buf.distance - s, 0.0)
            c, si = math.cos(self.head_in), math.sin(self.head_in)
            x = self.lane_in[0] - upstream * c
            y = self.lane_in[1] - upstream * si
            return (x, y, self.head_in, float(buf.v(min(tau, buf.horizon))),
                    float(buf.a(min(tau, buf.horizon))), 0.0)
        tau = t - self.entry
        if tau <= self.cross_T:
            if self.spline is not None:
                p = self.spline.value(tau)
                d1 = self.spline.derivative(tau, 1)
                d2 = self.spline.derivative(tau, 2)
                sp = math.hypot(d1[0], d1[1])
                th = math.atan2(d1[1], d1[0]) if sp > 1e-6 else self.head_in
                a_t = (d1 @ d2) / sp if sp > 1e-6 else 0.0
                kap = ((d1[0] * d2[1] - d1[1] * d2[0]) / sp ** 3
                       if sp > 1e-6 else 0.0)
                return (float(p[0]), float(p[1]), th, sp, float(a_t), float(kap))
            x, y, th, v, a = self.traj.sample_state(tau)
            return (x, y, th, v, a, self.traj.curvature_at(tau))
        out = tau - self.cross_T
        xo, yo, tho = self.exit_pose
        return (xo + self.v_exit * out * math.cos(tho),
                yo + self.v_exit * out * math.sin(tho),
                tho, self.v_exit, 0.0, 0.0)


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _control(measured: VehicleState, tgt, vspec: VehicleSpec) -> ControlInput:
    x, y, th, v, a_ff, kappa = tgt
    dx, dy = x - measured.x, y - measured.y
    c, s = math.cos(measured.theta), math.sin(measured.theta)
    e_along = c * dx + s * dy
    e_lat = -s * dx + c * dy
    e_th = _wrap(th - measured.theta)
    accel = a_ff + GAIN_SPEED * (v - measured.v) + GAIN_ALONG * e_along
    steer = (math.atan(vspec.wheelbase * kappa)
             + GAIN_HEADING * e_th
             + GAIN_LATERAL * math.atan2(e_lat, max(measured.v, 2.0)))
    return ControlInput(accel=accel, steer=steer)


def run_experiment(scenario: Scenario, strategy: str = "proposed",
                   threads: int = 1, library=None,
                   collect_logs: bool = True) -> SimulationResult:
    """Full run: schedule, refine where obstacles demand it, execute."""
    strat = hl.STRATEGY_BLOCKS if strategy == "proposed" else \
        hl.STRATEGY_WHOLE_ZONE if strategy in ("cs", hl.STRATEGY_WHOLE_ZONE) \
        else None
    if strat is None:
        raise ValueError(f"unknown strategy {strategy!r}")

    grid = scenario.grid
    vspec = scenario.vehicle
    lib = library if library is not None else scenario.make_library()
    requests = scenario.make_requests()

    metrics = Metrics(vehicles_requested=len(requests))
    sched = hl.run(requests, grid, lib, scenario.priority, scenario.rate_av,
                   strategy=strat, threads=threads)
    metrics.vehicles_scheduled = len(sched.allocations)
    metrics.hl_round_ms = list(sched.per_round_ms)
    metrics.queue_trace = list(sched.queue_trace)
    metrics.planned_makespan = sched.last_exit
    metrics.waits = {a.request.vehicle_id: a.wa_wait for a in sched.allocations}
    metrics.score_breakdown = [
        (a.request.vehicle_id, a.score.delay, a.score.wait, a.score.stability,
         a.score.score) for a in sched.allocations]

    obstacles = list(scenario.obstacles)
    obs_row = _obstacle_bits(grid, obstacles) if obstacles else None

    refined: dict = {}
    held: set = set()
    rs = scenario.refine
    ledger = sched_ledger(sched, grid) if obs_row is not None else None
    for alloc in sched.allocations:
        vid = alloc.request.vehicle_id
        if obs_row is None or not _blocks_hit(alloc.occupancy, obs_row):
            continue
        tunnel = hl.feasible_tunnel(alloc, rs.margin_cells, ledger)
        res = refine(alloc.trajectory, tunnel, obstacles, vspec,
                     weights=rs.weights, collision=rs.collision,
                     knot_dt=rs.knot_dt, max_restarts=rs.max_restarts)
        metrics.ll_ms.append(res.wall_ms)
        if res.success:
            refined[vid] = res
        else:
            held.add(vid)
            metrics.incidents.append(Incident(
                vid, "held", alloc.decision_time,
                "refinement failed: " + res.message))

    drives = [
        _Drive(a, scenario.config, vspec, refined.get(a.request.vehicle_id))
        for a in sched.allocations if a.request.vehicle_id not in held]
    drives.sort(key=lambda d: d.vid)

    rng = np.random.default_rng(scenario.seed)
    noise = scenario.noise
    zone = BoxObstacle(0.0, 0.0, 0.0, scenario.config.zone_half,
                       scenario.config.zone_half)
    horizon = min(max((d.end for d in drives), default=0.0) + SIM_DT,
                  scenario.duration)

    states: dict = {}
    logs: dict = {d.vid: VehicleLog(d.vid) for d in drives} if collect_logs else {}
    slab_rows: dict = {}
    cleared: dict = {}
    collided: set = set()
    body_hl = vspec.length / 2.0
    body_hw = vspec.width / 2.0

    n_steps = int(math.ceil(horizon / SIM_DT)) if drives else 0
    for istep in range(n_steps + 1):
        t = istep * SIM_DT
        active = []
        for d in drives:
            if d.vid in cleared or t < d.start - 1e-12 or t > d.end + 1e-12:
                continue
            if d.vid not in states:
                x, y, th, *_ = d.target(d.start)
                states[d.vid] = VehicleState(x, y, th, 0.0)
            active.append(d)

        bodies = {}
        for d in active:
            st = states[d.vid]
            tgt = d.target(t)
            err = math.hypot(tgt[0] - st.x, tgt[1] - st.y)
            if t >= d.entry - 1e-12:
                metrics.max_tracking_error = max(metrics.max_tracking_error, err)
            if collect_logs:
                logs[d.vid].rows.append((t, st.x, st.y, st.theta, st.v))
            body = BoxObstacle(st.x, st.y, st.theta, body_hl, body_hw)
            bodies[d.vid] = body
            # slab audit of the driven footprint, raw body, zone cells only
            if abs(st.x) < zone.half_len + vspec.half_diagonal and \
               abs(st.y) < zone.half_wid + vspec.half_diagonal:
                jt = grid.slab_of(t)
                if jt is not None:
                    rows = slab_rows.setdefault(jt, {})
                    row = rows.get(d.vid)
                    if row is None:
                        row = np.zeros(grid.words, dtype=np.uint64)
                        rows[d.vid] = row
                    footprint_bits(grid, st.x, st.y, st.theta,
                                   body_hl, body_hw, row)
            # departure bookkeeping
            if t > d.entry + d.cross_T and not rects_overlap(body, zone):
                cleared[d.vid] = t

        ids = sorted(bodies)
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                a, b = bodies[ids[i]], bodies[ids[j]]
                dist = math.hypot(a.cx - b.cx, a.cy - b.cy)
                metrics.min_pair_distance = min(metrics.min_pair_distance, dist)
                if dist < 2.0 * vspec.half_diagonal and rects_overlap(a, b):
                    pair = (ids[i], ids[j])
                    if pair not in collided:
                        collided.add(pair)
                        metrics.incidents.append(Incident(
                            ids[i], "collision", t,
                            f"body overlap with vehicle {ids[j]}"))

        for d in active:
            st = states[d.vid]
            measured = perturb_pose(st, noise, rng)
            cmd = _control(measured, d.target(t), vspec)
            actual = perturb_control(cmd, noise, rng)
            states[d.vid] = step(st, actual, vspec, SIM_DT)

    # block-level audit: any two vehicles sharing a cell in the same slab
    slab_overlaps = 0
    for jt, rows in slab_rows.items():
        ids = sorted(rows)
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                if (rows[ids[i]] & rows[ids[j]]).any():
                    slab_overlaps += 1
                    pair = (ids[i], ids[j])
                    if pair not in collided:
                        collided.add(pair)
                        metrics.incidents.append(Incident(
                            ids[i], "collision", jt * grid.dt,
                            f"slab {jt} block overlap with vehicle {ids[j]}"))

    metrics.collision_count = len(collided)
    for d in drives:
        if d.vid not in cleared and d.end <= horizon:
            # never detected as clear of the zone within its window
            metrics.incidents.append(Incident(d.vid, "timeout", horizon,
                                              "not clear of the zone"))
    metrics.vehicles_passed = len(cleared)
    metrics.passing_time = max(cleared.values(), default=0.0)
    return SimulationResult(scenario=scenario, strategy=strategy,
                            metrics=metrics, schedule=sched, logs=logs,
                            refined=refined)


def sched_ledger(sched: hl.ScheduleResult, grid: GridSpec) -> ReservationLedger:
    led = ReservationLedger(grid)
    for a in sched.allocations:
        led.add(a.occupancy)
    return led


def export(result: SimulationResult, out_dir) -> list:
    """Write schedule, per-vehicle logs, occupancy dumps and summaries."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    p = os.path.join(out_dir, "schedule.csv")
    hl.schedule_to_csv(result.schedule, p)
    written.append(p)

    veh_dir = os.path.join(out_dir, "vehicles")
    occ_dir = os.path.join(out_dir, "occupancy")
    os.makedirs(veh_dir, exist_ok=True)
    os.makedirs(occ_dir, exist_ok=True)
    for vid in sorted(result.logs):
        p = os.path.join(veh_dir, f"veh_{vid:03d}.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "theta", "v"])
            for row in result.logs[vid].rows:
                w.writerow([f"{v:.6f}" for v in row])
        written.append(p)
    for alloc in result.schedule.allocations:
        vid = alloc.request.vehicle_id
        p = os.path.join(occ_dir, f"veh_{vid:03d}.csv")
        occupancy_to_csv(alloc.occupancy, p)
        written.append(p)

    m = result.metrics
    p = os.path.join(out_dir, "metrics.json")
    doc = m.summary()
    doc["strategy"] = result.strategy
    doc["scenario"] = result.scenario.name
    doc["incidents"] = [
        {"vehicle_id": i.vehicle_id, "kind": i.kind,
         "time": round(i.time, 6), "detail": i.detail} for i in m.incidents]
    doc["waits"] = {str(k): round(v, 6) for k, v in sorted(m.waits.items())}
    with open(p, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(p)

    p = os.path.join(out_dir, "acceptance.json")
    with open(p, "w") as fh:
        json.dump({
            "collision_count": m.collision_count,
            "all_scheduled": m.all_scheduled,
            "clean": m.clean,
            "vehicles_passed": m.vehicles_passed,
            "passing_time_s": round(m.passing_time, 6),
            "hl_round_ms_max": round(max(m.hl_round_ms), 3) if m.hl_round_ms else 0.0,
            "ll_ms_max": round(max(m.ll_ms), 3) if m.ll_ms else 0.0,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(p)
    return written
