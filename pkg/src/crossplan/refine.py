"""Trajectory refinement around unexpected obstacles.

The refined path is a uniform cubic B-spline whose first and last three
control points are pinned to the granted trajectory's boundary state. The
interior is optimized with L-BFGS-B against a smoothness cost plus a
repulsion cost built from anchor/direction pairs, one pair per control
point and nearby obstacle. Distances enter the cost through the projection
(Q - p) . v which is affine in the control point, so the cost is piecewise
cubic with matching first and second derivatives at the branch joints.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .bspline import CubicBSpline, control_count, fit_spline
from .grid import GridSpec, footprint_bits, occupancy_sample_step
from .vehicle import VehicleSpec


@dataclass(frozen=True)
class BoxObstacle:
    """Oriented rectangle blocking part of the zone."""

    cx: float
    cy: float
    heading: float = 0.0
    half_len: float = 0.5
    half_wid: float = 0.5

    def closest_point(self, qx: float, qy: float):
        """Closest boundary point and signed distance (negative inside)."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        lx = c * (qx - self.cx) + s * (qy - self.cy)
        ly = -s * (qx - self.cx) + c * (qy - self.cy)
        if abs(lx) <= self.half_len and abs(ly) <= self.half_wid:
            # inside: pop out through the nearest face
            slack_x = self.half_len - abs(lx)
            slack_y = self.half_wid - abs(ly)
            if slack_x < slack_y:
                bx = math.copysign(self.half_len, lx if lx else 1.0)
                by = ly
                dist = -slack_x
            else:
                bx = lx
                by = math.copysign(self.half_wid, ly if ly else 1.0)
                dist = -slack_y
        else:
            bx = min(max(lx, -self.half_len), self.half_len)
            by = min(max(ly, -self.half_wid), self.half_wid)
            dist = math.hypot(lx - bx, ly - by)
        px = self.cx + c * bx - s * by
        py = self.cy + s * bx + c * by
        return px, py, dist

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        out = np.empty((4, 2))
        for i, (sx, sy) in enumerate(((1, 1), (1, -1), (-1, -1), (-1, 1))):
            lx, ly = sx * self.half_len, sy * self.half_wid
            out[i] = (self.cx + c * lx - s * ly, self.cy + s * lx + c * ly)
        return out


def rects_overlap(a: BoxObstacle, b: BoxObstacle) -> bool:
    """Separating-axis test; touching along an edge does not count."""
    ca, cb = a.corners(), b.corners()
    for rect in (a, b):
        c, s = math.cos(rect.heading), math.sin(rect.heading)
        for ax, ay in ((c, s), (-s, c)):
            pa = ca @ (ax, ay)
            pb = cb @ (ax, ay)
            if pa.max() <= pb.min() or pb.max() <= pa.min():
                return False
    return True


@dataclass(frozen=True)
class CollisionParams:
    """Repulsion shaping.

    clearance is the width of the cubic penalty band beyond the inflated
    obstacle surface. The default inflation assumes the body passes the
    obstacle roughly tangentially, so it grows obstacles by the inflated
    half width; the exact rectangle check after optimization is the
    authority, the band only steers the optimizer. influence sets how far
    from the surface anchor pairs are still generated: pairs outside the
    band cost nothing but start pulling as soon as the optimizer drags a
    control point inside.
    """

    clearance: float = 0.5
    influence: float = 2.5
    inflation: float | None = None
    wall_margin: float | None = None

    def inflation_for(self, vspec: VehicleSpec) -> float:
        if self.inflation is not None:
            return self.inflation
        return vspec.half_wid

    def wall_margin_for(self, vspec: VehicleSpec) -> float:
        if self.wall_margin is not None:
            return self.wall_margin
        return vspec.width / 2.0 + vspec.r_lat


@dataclass(frozen=True)
class CostWeights:
    w_acc: float = 5.0
    w_jerk: float = 1.0
    w_obstacle: float = 1000.0


@dataclass(frozen=True)
class RepulsionPair:
    index: int                  # control point the pair acts on
    anchor: np.ndarray          # (2,) point on the inflated surface
    direction: np.ndarray       # (2,) unit, pointing into free space
    band: float                 # penalty band width for this pair


def band_cost(c: float, s_f: float) -> float:
    """Piecewise cubic in the shortfall c = band - projected distance."""
    if c <= 0.0:
        return 0.0
    if c <= s_f:
        return c ** 3
    return 3.0 * s_f * c * c - 3.0 * s_f * s_f * c + s_f ** 3


def band_cost_grad(c: float, s_f: float) -> float:
    if c <= 0.0:
        return 0.0
    if c <= s_f:
        return 3.0 * c * c
    return 6.0 * s_f * c - 3.0 * s_f * s_f


def obstacle_pairs(points: np.ndarray, obstacles, params: CollisionParams,
                   vspec: VehicleSpec, free_lo: int, free_hi: int):
    """Anchor/direction pairs for control points near inflated obstacles."""
    pairs = []
    grow = params.inflation_for(vspec)
    s_f = params.clearance
    for i in range(free_lo, free_hi + 1):
        qx, qy = points[i]
        for obs in obstacles:
            big = BoxObstacle(obs.cx, obs.cy, obs.heading,
                              obs.half_len + grow, obs.half_wid + grow)
            px, py, dist = big.closest_point(qx, qy)
            if dist >= params.influence:
                continue
            if dist > 1e-12:
                v = np.array([qx - px, qy - py]) / dist
            else:
                # on or inside the inflated surface: push outward through
                # the nearest face
                v = np.array([px - qx, py - qy])
                n = np.hypot(v[0], v[1])
                if n < 1e-12:
                    v = np.array([qx - obs.cx, qy - obs.cy])
                    n = np.hypot(v[0], v[1])
                    if n < 1e-12:
                        v, n = np.array([1.0, 0.0]), 1.0
                v = v / n
            pairs.append(RepulsionPair(i, np.array([px, py]), v, s_f))
    return pairs


def tunnel_wall_pairs(points: np.ndarray, times, duration: float, tunnel,
                      params: CollisionParams, vspec: VehicleSpec,
                      free_lo: int, free_hi: int):
    """Pairs keeping control points clear of blocks outside the tunnel.

    Works per slab: an Euclidean distance transform of the allowed region
    finds the nearest blocked cell for each control point; the pair anchors
    on that cell center with a band of wall margin plus the cell reach.
    """
    grid = tunnel.grid
    margin = params.wall_margin_for(vspec)
    cell_reach = 0.5 * math.hypot(grid.dx, grid.dy)
    band = margin + cell_reach
    pairs = []
    edt_cache: dict = {}
    for i in range(free_lo, free_hi + 1):
        t_abs = tunnel.entry_time + min(max(times[i], 0.0), duration)
        jt = grid.slab_of(t_abs)
        if jt is None:
            continue
        if jt not in edt_cache:
            row = tunnel.slab_bits(jt)
            if row is None:
                edt_cache[jt] = None
            else:
                allowed = np.unpackbits(row.view(np.uint8), bitorder="little")
                allowed = allowed[: grid.nx * grid.ny].reshape(grid.ny, grid.nx)
                if not allowed.any():
                    edt_cache[jt] = None
                else:
                    dist, (iy, ix) = ndimage.distance_transform_edt(
                        allowed, sampling=(grid.dy, grid.dx),
                        return_indices=True)
                    edt_cache[jt] = (dist, iy, ix)
        cached = edt_cache[jt]
        if cached is None:
            continue
        dist_map, iy, ix = cached
        qx, qy = points[i]
        jx = min(max(int((qx - grid.x0) / grid.dx), 0), grid.nx - 1)
        jy = min(max(int((qy - grid.y0) / grid.dy), 0), grid.ny - 1)
        if dist_map[jy, jx] > band + params.influence:
            continue
        bx = grid.x0 + (ix[jy, jx] + 0.5) * grid.dx
        by = grid.y0 + (iy[jy, jx] + 0.5) * grid.dy
        v = np.array([qx - bx, qy - by])
        n = np.hypot(v[0], v[1])
        if n < 1e-12:
            continue
        pairs.append(RepulsionPair(i, np.array([bx, by]), v / n, band))
    return pairs


def _smoothness(control: np.ndarray, dt: float, weights: CostWeights):
    """Acceleration plus jerk control point energy with its gradient."""
    acc = np.diff(control, n=2, axis=0) / dt ** 2
    jrk = np.diff(control, n=3, axis=0) / dt ** 3
    cost = weights.w_acc * float((acc * acc).sum()) \
        + weights.w_jerk * float((jrk * jrk).sum())
    g = np.zeros_like(control)
    ga = 2.0 * weights.w_acc * acc / dt ** 2
    n = control.shape[0]
    g[0: n - 2] += ga
    g[1: n - 1] -= 2.0 * ga
    g[2: n] += ga
    gj = 2.0 * weights.w_jerk * jrk / dt ** 3
    g[0: n - 3] -= gj
    g[1: n - 2] += 3.0 * gj
    g[2: n - 1] -= 3.0 * gj
    g[3: n] += gj
    return cost, g


def _repulsion(control: np.ndarray, pairs, w: float):
    cost = 0.0
    g = np.zeros_like(control)
    for pair in pairs:
        d = float((control[pair.index] - pair.anchor) @ pair.direction)
        c = pair.band - d
        cost += band_cost(c, pair.band)
        g[pair.index] -= band_cost_grad(c, pair.band) * pair.direction
    return w * cost, w * g


def refinement_cost(control: np.ndarray, dt: float, pairs,
                    weights: CostWeights):
    cs, gs = _smoothness(control, dt, weights)
    co, go = _repulsion(control, pairs, weights.w_obstacle)
    return cs + co, gs + go


@dataclass
class RefineResult:
    spline: CubicBSpline
    success: bool
    checks: dict
    cost: float
    initial_cost: float
    iterations: int
    restarts: int
    wall_ms: float
    pair_count: int
    message: str = ""
    iterate_log: list = field(default_factory=list)

    def sample(self, n: int = 120):
        ts = np.linspace(0.0, self.spline.duration, n)
        pos = self.spline.value(ts)
        vel = self.spline.derivative(ts, 1)
        return ts, pos, vel


ACCEL_HEADROOM = 1.5
ACCEL_FLOOR = 8.0


def _sampled_norms(spline: CubicBSpline, n: int = 400):
    ts = np.linspace(0.0, spline.duration, n)
    v = np.linalg.norm(spline.derivative(ts, 1), axis=1)
    a = np.linalg.norm(spline.derivative(ts, 2), axis=1)
    return v, a


def _check_limits(spline: CubicBSpline, vspec: VehicleSpec,
                  accel_limit: float, tol: float = 1e-6):
    v, a = _sampled_norms(spline)
    return bool((v <= vspec.v_max + tol).all()), \
        bool((a <= accel_limit + tol).all())


def _check_collision(spline: CubicBSpline, obstacles, vspec: VehicleSpec,
                     step: float):
    ts = np.arange(0.0, spline.duration + step / 2, step)
    pos = spline.value(ts)
    vel = spline.derivative(ts, 1)
    for k in range(len(ts)):
        speed = math.hypot(vel[k, 0], vel[k, 1])
        if speed > 1e-9:
            theta = math.atan2(vel[k, 1], vel[k, 0])
        elif k > 0:
            theta = math.atan2(pos[k, 1] - pos[k - 1, 1],
                               pos[k, 0] - pos[k - 1, 0])
        else:
            theta = 0.0
        body = BoxObstacle(pos[k, 0], pos[k, 1], theta,
                           vspec.half_len, vspec.half_wid)
        for obs in obstacles:
            if rects_overlap(body, obs):
                return False
    return True


def _check_tunnel(spline: CubicBSpline, tunnel, vspec: VehicleSpec,
                  step: float):
    grid = tunnel.grid
    row = np.zeros(grid.words, dtype=np.uint64)
    ts = np.arange(0.0, spline.duration + step / 2, step)
    pos = spline.value(ts)
    vel = spline.derivative(ts, 1)
    by_slab: dict = {}
    for k in range(len(ts)):
        jt = grid.slab_of(tunnel.entry_time + ts[k])
        if jt is None:
            return False
        by_slab.setdefault(jt, []).append(k)
    for jt, ks in by_slab.items():
        own = tunnel.slab_bits(jt)
        if own is None:
            return False
        row[:] = 0
        for k in ks:
            speed = math.hypot(vel[k, 0], vel[k, 1])
            theta = math.atan2(vel[k, 1], vel[k, 0]) if speed > 1e-9 else 0.0
            footprint_bits(grid, pos[k, 0], pos[k, 1], theta,
                           vspec.half_len, vspec.half_wid, row)
        if (row & ~own).any():
            return False
    return True


def refine(reference, tunnel, obstacles, vspec: VehicleSpec,
           weights: CostWeights = CostWeights(),
           collision: CollisionParams = CollisionParams(),
           knot_dt: float = 0.08, max_restarts: int = 3,
           maxiter: int = 200, accel_limit: float | None = None,
           keep_iterates: bool = False):
    """Refine a granted trajectory around obstacles, inside its tunnel.

    ``reference`` must offer duration, sample_pose(t) and boundary_state(t);
    the granted trajectories do. accel_limit caps the combined planar
    acceleration of the result; the default allows half again the
    reference's own peak, or 8 m/s^2 if that is larger. Post checks run
    after each optimizer pass; a failed check multiplies the obstacle
    weight tenfold, rebuilds the repulsion pairs at the current iterate and
    tries again, up to max_restarts.
    """
    t_start = time.perf_counter()
    T = reference.duration
    n, dt = control_count(T, knot_dt)

    dense_t = np.linspace(0.0, T, max(12 * n, 60))
    dense_p = np.array([reference.sample_pose(t)[:2] for t in dense_t])
    b0 = reference.boundary_state(0.0)
    b1 = reference.boundary_state(T)
    spline = fit_spline(dense_t, dense_p, knot_dt, start=b0, end=b1)
    assert spline.n_control == n

    free_lo, free_hi = 3, n - 4
    times = spline.control_times()
    initial = spline.control.copy()
    if accel_limit is None:
        # a swerve may not be much harsher than the granted trajectory; the
        # floor keeps straight crossings (reference accel near zero) dodgeable
        accel_limit = max(ACCEL_HEADROOM * float(_sampled_norms(spline)[1].max()),
                          ACCEL_FLOOR)

    w = weights
    pairs = obstacle_pairs(spline.control, obstacles, collision, vspec,
                           free_lo, free_hi)
    if tunnel is not None:
        pairs += tunnel_wall_pairs(spline.control, times, T, tunnel,
                                   collision, vspec, free_lo, free_hi)

    initial_cost, _ = refinement_cost(initial, dt, pairs, w)
    step = occupancy_sample_step(tunnel.grid, vspec.v_max) if tunnel is not None \
        else max(T / 200.0, 1e-3)
    iterates: list = []
    total_iters = 0
    restarts = 0
    control = initial.copy()
    message = ""

    while True:
        shape = (free_hi - free_lo + 1, 2)

        def fun(x):
            q = control.copy()
            q[free_lo: free_hi + 1] = x.reshape(shape)
            c, g = refinement_cost(q, dt, pairs, w)
            return c, g[free_lo: free_hi + 1].reshape(-1)

        cb = (lambda x: iterates.append(x.copy())) if keep_iterates else None
        res = optimize.minimize(
            fun, control[free_lo: free_hi + 1].reshape(-1), jac=True,
            method="L-BFGS-B", callback=cb,
            options={"maxcor": 8, "gtol": 1e-4, "ftol": 1e-12,
                     "maxiter": maxiter})
        total_iters += res.nit
        control[free_lo: free_hi + 1] = res.x.reshape(shape)
        spline = CubicBSpline(dt, control.copy())

        ok_v, ok_a = _check_limits(spline, vspec, accel_limit)
        ok_col = _check_collision(spline, obstacles, vspec, step)
        ok_tun = tunnel is None or _check_tunnel(spline, tunnel, vspec, step)
        checks = {"collision": ok_col, "tunnel": ok_tun,
                  "speed": ok_v, "acceleration": ok_a}
        if all(checks.values()) or restarts >= max_restarts:
            if not all(checks.values()):
                message = "checks failed after retries: " + ", ".join(
                    k for k, v in checks.items() if not v)
            break
        restarts += 1
        w = CostWeights(w.w_acc, w.w_jerk, w.w_obstacle * 10.0)
        pairs = obstacle_pairs(control, obstacles, collision, vspec,
                               free_lo, free_hi)
        if tunnel is not None:
            pairs += tunnel_wall_pairs(control, times, T, tunnel,
                                       collision, vspec, free_lo, free_hi)

    final_cost, _ = refinement_cost(control, dt, pairs, w)
    result = RefineResult(
        spline=spline, success=all(checks.values()), checks=checks,
        cost=final_cost, initial_cost=initial_cost, iterations=total_iters,
        restarts=restarts, wall_ms=(time.perf_counter() - t_start) * 1e3,
        pair_count=len(pairs), message=message, iterate_log=iterates)
    return result
