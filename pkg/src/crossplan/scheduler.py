"""Centralized block scheduler.

Each round scores the head vehicle of every non-empty road queue, picks the
lowest score and commits its occupancy to the reservation ledger. A head's
tentative grant is the earliest entry time on the dt grid whose shifted
occupancy is disjoint from everything committed so far.

Score terms (lower wins):

* delay: the makespan the grant would produce, in seconds;
* wait: accumulated queue waiting of the road, sum of wait/position over
  the queue, subtracted so starved roads climb;
* stability: queue length times the nominal arrival rate, subtracted so
  long queues drain first.

Two clock notions are kept apart on purpose. The entry-time floor uses the
round's decision time, so later vehicles may fill gaps the schedule left
earlier. Waiting is measured against max(decision time, latest granted
entry): in a batch scenario rounds all happen at t = 0 and waits would
otherwise never accumulate.
"""

from __future__ import annotations

import csv
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import Maneuver
from .grid import GridSpec, OccupancySet, ReservationLedger, bits_to_cells, trajectory_occupancy
from .reference import BufferProfile, Trajectory, build_trajectory, find_buffer_time

STRATEGY_BLOCKS = "blocks"
STRATEGY_WHOLE_ZONE = "whole-zone"


@dataclass(frozen=True)
class MotionRequest:
    vehicle_id: int
    road: int
    maneuver: Maneuver
    arrival_time: float


@dataclass(frozen=True)
class PriorityWeights:
    w_delay: float = 1.0
    w_wait: float = 0.5
    w_stab: float = 1.0


@dataclass(frozen=True)
class ScoreTerms:
    delay: float
    wait: float
    stability: float

    @property
    def score(self) -> float:
        return self.delay - self.wait - self.stability


@dataclass
class Allocation:
    request: MotionRequest
    trajectory: Trajectory
    entry_slab: int               # k with t_e = k * dt
    entry_time: float
    occupancy: OccupancySet
    buffer: BufferProfile
    start_time: float             # leaves the waiting position
    decision_time: float
    score: ScoreTerms
    round_index: int

    @property
    def exit_time(self) -> float:
        return self.entry_time + self.trajectory.duration

    @property
    def wa_wait(self) -> float:
        return self.start_time - self.request.arrival_time


class TrajectoryLibrary:
    """Caches reference trajectories and minimal buffer ramps per maneuver."""

    def __init__(self, config, vspec, v_ref: float, deviation_bound: float = 1.0,
                 smooth_weights=(1.0, 1.0, 1.0), sample_ds: float = 0.5,
                 piece_length: float = 2.0, buffer_distance: float | None = None):
        self.config = config
        self.vspec = vspec
        self.v_ref = v_ref
        self.deviation_bound = deviation_bound
        self.smooth_weights = tuple(smooth_weights)
        self.sample_ds = sample_ds
        self.piece_length = piece_length
        self.buffer_distance = (config.buffer_length if buffer_distance is None
                                else buffer_distance)
        self._traj: dict = {}
        self._ramp: dict = {}

    def trajectory(self, road: int, maneuver: Maneuver) -> Trajectory:
        key = (road, Maneuver.parse(maneuver))
        if key not in self._traj:
            self._traj[key] = build_trajectory(
                self.config, self.vspec, road, key[1], self.v_ref,
                self.deviation_bound, self.smooth_weights,
                self.sample_ds, self.piece_length)
        return self._traj[key]

    def min_ramp(self, road: int, maneuver: Maneuver) -> BufferProfile:
        """Fastest standstill-to-entry ramp over the buffer stretch."""
        key = (road, Maneuver.parse(maneuver))
        if key not in self._ramp:
            traj = self.trajectory(road, key[1])
            self._ramp[key] = find_buffer_time(
                self.buffer_distance, 0.0, 0.0, traj.v_entry, 0.0, self.vspec)
        return self._ramp[key]

    def buffer_floor(self, road: int, maneuver: Maneuver) -> float:
        return self.min_ramp(road, maneuver).horizon

    def warm(self, grid: GridSpec | None = None):
        """Precompute every maneuver (and its occupancy when grid given)."""
        for road in (1, 2, 3, 4):
            for m in Maneuver:
                self.min_ramp(road, m)
                if grid is not None:
                    trajectory_occupancy(self.trajectory(road, m),
                                         self.vspec, grid, 0.0)
        return self


@dataclass
class _Candidate:
    road: int
    request: MotionRequest
    trajectory: Trajectory
    entry_slab: int
    entry_time: float
    occupancy: OccupancySet
    score: ScoreTerms


class PlannerState:
    def __init__(self, grid: GridSpec, library: TrajectoryLibrary,
                 weights: PriorityWeights, rate_av: float,
                 strategy: str = STRATEGY_BLOCKS):
        if strategy not in (STRATEGY_BLOCKS, STRATEGY_WHOLE_ZONE):
            raise ValueError(f"unknown strategy {strategy!r}")
        self.grid = grid
        self.library = library
        self.weights = weights
        self.rate_av = rate_av
        self.strategy = strategy
        self.ledger = ReservationLedger(grid)
        self.queues: dict[int, deque] = {r: deque() for r in (1, 2, 3, 4)}
        self.clock = 0.0
        self.frontier = 0.0
        self.last_entry_by_road: dict[int, float] = {}
        self.allocations: list[Allocation] = []

    @property
    def wait_clock(self) -> float:
        return max(self.clock, self.frontier)

    def admit(self, request: MotionRequest):
        self.queues[request.road].append(request)

    def pending(self) -> int:
        return sum(len(q) for q in self.queues.values())


def _entry_floor_slab(grid: GridSpec, floor_time: float) -> int:
    """Smallest k with k * dt >= floor_time (snapped)."""
    return max(0, int(math.ceil(floor_time / grid.dt - 1e-9)))


def earliest_entry(state: PlannerState, request: MotionRequest,
                   floor_time: float):
    """Earliest grid entry (slab, time) whose occupancy clears the ledger.

    Under the whole-zone strategy the zone is one collision set: entry must
    wait until every committed occupancy has fully expired.
    """
    traj = state.library.trajectory(request.road, request.maneuver)
    rel = trajectory_occupancy(traj, state.library.vspec, state.grid, 0.0)
    k0 = _entry_floor_slab(state.grid, floor_time)
    k0 = max(k0, 1 - rel.jt_lo)
    if state.strategy == STRATEGY_WHOLE_ZONE:
        k = max(k0, state.ledger.max_jt + 1 - rel.min_jt())
    else:
        k = state.ledger.earliest_shift(rel, k0)
    return k, k * state.grid.dt, rel.shifted(k)


def _candidate(state: PlannerState, road: int) -> _Candidate:
    request = state.queues[road][0]
    lib = state.library
    traj = lib.trajectory(road, request.maneuver)
    t_a_min = lib.buffer_floor(road, request.maneuver)

    # reachability: the standstill ramp starts at the decision instant at
    # the earliest. The road's buffer stretch holds one vehicle at a time,
    # so the ramp may also not begin before the previous same-road grant
    # has entered the zone.
    ready = max(request.arrival_time, state.clock,
                state.last_entry_by_road.get(road, -math.inf))
    k, t_e, occ = earliest_entry(state, request, ready + t_a_min)

    w = state.weights
    delay = w.w_delay * max(state.ledger.max_jt, occ.max_jt()) * state.grid.dt
    wait = 0.0
    for pos, req in enumerate(state.queues[road], start=1):
        wait += max(0.0, state.wait_clock - req.arrival_time) / pos
    wait *= w.w_wait
    stability = w.w_stab * len(state.queues[road]) * state.rate_av
    return _Candidate(road, request, traj, k, t_e, occ,
                      ScoreTerms(delay, wait, stability))


def schedule_round(state: PlannerState, threads: int = 1,
                   forced_road: int | None = None) -> Allocation | None:
    """Run one allocation round; returns None when no queue has a head."""
    if forced_road is not None:
        roads = [forced_road] if state.queues[forced_road] else []
    else:
        roads = [r for r in sorted(state.queues) if state.queues[r]]
    if not roads:
        return None

    if threads > 1 and len(roads) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            candidates = list(pool.map(lambda r: _candidate(state, r), roads))
    else:
        candidates = [_candidate(state, r) for r in roads]

    best = min(candidates, key=lambda c: (c.score.score, c.road))
    state.queues[best.road].popleft()

    ramp = state.library.min_ramp(best.road, best.request.maneuver)
    occ = OccupancySet(state.grid, best.occupancy.jt_lo, best.occupancy.bits,
                       owner=best.request.vehicle_id)
    alloc = Allocation(
        request=best.request,
        trajectory=best.trajectory,
        entry_slab=best.entry_slab,
        entry_time=best.entry_time,
        occupancy=occ,
        buffer=ramp,
        start_time=best.entry_time - ramp.horizon,
        decision_time=state.clock,
        score=best.score,
        round_index=len(state.allocations),
    )
    state.ledger.add(alloc.occupancy)
    state.frontier = max(state.frontier, alloc.entry_time)
    state.last_entry_by_road[best.road] = alloc.entry_time
    state.allocations.append(alloc)
    return alloc


@dataclass
class ScheduleResult:
    strategy: str
    grid: GridSpec
    allocations: list
    per_round_ms: list
    queue_trace: list
    weights: PriorityWeights

    @property
    def makespan_slab(self) -> int:
        return max((a.occupancy.max_jt() for a in self.allocations), default=0)

    @property
    def makespan_time(self) -> float:
        return self.makespan_slab * self.grid.dt

    @property
    def last_exit(self) -> float:
        return max((a.exit_time for a in self.allocations), default=0.0)

    def by_vehicle(self) -> dict:
        return {a.request.vehicle_id: a for a in self.allocations}

    def all_scheduled(self, requests) -> bool:
        have = {a.request.vehicle_id for a in self.allocations}
        return all(r.vehicle_id in have for r in requests)


def run(requests, grid: GridSpec, library: TrajectoryLibrary,
        weights: PriorityWeights = PriorityWeights(), rate_av: float = 0.8,
        strategy: str = STRATEGY_BLOCKS, forced_order=None,
        threads: int = 1) -> ScheduleResult:
    """Schedule a full request list.

    Rounds are decided at arrival-driven instants: all vehicles present at
    the current clock compete; when nobody is waiting the clock jumps to the
    next arrival. With ``forced_order`` (a vehicle-id sequence) priority is
    bypassed and vehicles are committed in exactly that order, each decided
    at max(previous decision, its arrival); both strategies then see
    identical floors, which is what the dominance comparison needs.
    """
    state = PlannerState(grid, library, weights, rate_av, strategy)
    per_round_ms: list = []
    queue_trace: list = []

    if forced_order is not None:
        by_id = {r.vehicle_id: r for r in requests}
        if set(by_id) != set(forced_order):
            raise ValueError("forced_order must cover exactly the request ids")
        for vid in forced_order:
            req = by_id[vid]
            state.clock = max(state.clock, req.arrival_time)
            state.admit(req)
            t0 = time.perf_counter()
            schedule_round(state, forced_road=req.road)
            per_round_ms.append((time.perf_counter() - t0) * 1e3)
            queue_trace.append((state.clock, tuple(len(state.queues[r]) for r in (1, 2, 3, 4))))
        return ScheduleResult(strategy, grid, state.allocations, per_round_ms,
                              queue_trace, weights)

    pending = sorted(requests, key=lambda r: (r.arrival_time, r.vehicle_id))
    i = 0
    n = len(pending)
    while i < n or state.pending():
        while i < n and pending[i].arrival_time <= state.clock + 1e-12:
            state.admit(pending[i])
            i += 1
        if not state.pending():
            state.clock = pending[i].arrival_time
            continue
        t0 = time.perf_counter()
        schedule_round(state, threads=threads)
        per_round_ms.append((time.perf_counter() - t0) * 1e3)
        queue_trace.append((state.clock, tuple(len(state.queues[r]) for r in (1, 2, 3, 4))))
    return ScheduleResult(strategy, grid, state.allocations, per_round_ms,
                          queue_trace, weights)


@dataclass
class FeasibleTunnel:
    """Per-slab cell envelope granted to one vehicle."""

    grid: GridSpec
    vehicle_id: object
    jt_lo: int
    bits: np.ndarray
    entry_time: float

    @property
    def jt_hi(self) -> int:
        return self.jt_lo + self.bits.shape[0] - 1

    def slab_bits(self, jt: int):
        i = jt - self.jt_lo
        if i < 0 or i >= self.bits.shape[0]:
            return None
        return self.bits[i]

    def slab_cells(self, jt: int) -> np.ndarray:
        row = self.slab_bits(jt)
        if row is None:
            return np.empty((0, 2), dtype=np.int64)
        return bits_to_cells(row, self.grid.nx)

    def contains(self, occ: OccupancySet) -> bool:
        """True iff every occupied block lies inside the tunnel."""
        if occ.grid != self.grid:
            raise ValueError("grid mismatch")
        for i in range(occ.n_slabs):
            row = occ.bits[i]
            if not row.any():
                continue
            own = self.slab_bits(occ.jt_lo + i)
            if own is None or (row & ~own).any():
                return False
        return True


def _dilate_row(row: np.ndarray, grid: GridSpec, iterations: int) -> np.ndarray:
    plane = np.unpackbits(row.view(np.uint8), bitorder="little")[: grid.nx * grid.ny]
    plane = plane.reshape(grid.ny, grid.nx).astype(bool)
    plane = ndimage.binary_dilation(plane, structure=np.ones((3, 3), bool),
                                    iterations=iterations)
    flat = np.packbits(plane.reshape(-1), bitorder="little")
    out = np.zeros(grid.words, dtype=np.uint64)
    out_u8 = out.view(np.uint8)
    out_u8[: len(flat)] |= flat
    return out


def feasible_tunnel(alloc: Allocation, margin_cells: int = 0,
                    ledger: ReservationLedger | None = None) -> FeasibleTunnel:
    """Tunnel = granted blocks, optionally dilated by whole cells.

    Dilated cells are re-checked against the ledger: a margin never claims a
    block granted to someone else (the vehicle's own blocks are exempt).
    """
    occ = alloc.occupancy
    grid = occ.grid
    bits = occ.bits.copy()
    if margin_cells > 0:
        for i in range(bits.shape[0]):
            if not bits[i].any():
                continue
            grown = _dilate_row(bits[i], grid, margin_cells)
            if ledger is not None:
                jt = occ.jt_lo + i
                if 1 <= jt <= ledger.bits.shape[0]:
                    others = ledger.bits[jt - 1] & ~occ.bits[i]
                    grown &= ~others
            bits[i] = grown | occ.bits[i]
    return FeasibleTunnel(grid=grid, vehicle_id=occ.owner, jt_lo=occ.jt_lo,
                          bits=bits, entry_time=alloc.entry_time)


def schedule_to_csv(result: ScheduleResult, path):
    cols = ["vehicle_id", "road", "maneuver", "arrival", "decision", "entry",
            "buffer_start", "buffer_time", "exit", "first_slab", "last_slab",
            "p_delay", "p_wait", "p_stability", "score"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for a in result.allocations:
            w.writerow([
                a.request.vehicle_id, a.request.road, a.request.maneuver.value,
                f"{a.request.arrival_time:.6f}", f"{a.decision_time:.6f}",
                f"{a.entry_time:.6f}", f"{a.start_time:.6f}",
                f"{a.buffer.horizon:.6f}", f"{a.exit_time:.6f}",
                a.occupancy.min_jt(), a.occupancy.max_jt(),
                f"{a.score.delay:.6f}", f"{a.score.wait:.6f}",
                f"{a.score.stability:.6f}", f"{a.score.score:.6f}",
            ])
