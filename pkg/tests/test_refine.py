"""Obstacle refinement: repulsion shaping, gradients, end-to-end dodges."""

import math

import numpy as np
import pytest

from crossplan.bspline import control_count, fit_spline
from crossplan.geometry import Maneuver
from crossplan.grid import ReservationLedger
from crossplan.refine import (BoxObstacle, CollisionParams, CostWeights,
                              band_cost, band_cost_grad, obstacle_pairs,
                              rects_overlap, refine, refinement_cost,
                              tunnel_wall_pairs)
from crossplan.scheduler import MotionRequest, feasible_tunnel, run

PARAMS = CollisionParams()


# ------------------------------------------------------ overlap oracle

def _clip_area(pa: np.ndarray, pb: np.ndarray) -> float:
    """Intersection area of two convex quads via half-plane clipping."""
    def ccw(p):
        x, y = p[:, 0], p[:, 1]
        s = np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)
        return p if s > 0 else p[::-1]

    poly = [tuple(v) for v in ccw(pa)]
    clip = ccw(pb)
    for i in range(len(clip)):
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % len(clip)]
        out = []
        for j in range(len(poly)):
            px, py = poly[j]
            qx, qy = poly[(j + 1) % len(poly)]
            sp = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            sq = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
            if sp >= 0:
                out.append((px, py))
            if (sp > 0) != (sq > 0) and sp != sq:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
        poly = out
        if not poly:
            return 0.0
    arr = np.asarray(poly)
    x, y = arr[:, 0], arr[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def test_rects_overlap_matches_area_oracle():
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(300):
        a = BoxObstacle(*rng.uniform(-2, 2, 2), rng.uniform(0, math.pi),
                        rng.uniform(0.2, 1.5), rng.uniform(0.2, 1.5))
        b = BoxObstacle(*rng.uniform(-2, 2, 2), rng.uniform(0, math.pi),
                        rng.uniform(0.2, 1.5), rng.uniform(0.2, 1.5))
        area = _clip_area(a.corners(), b.corners())
        if area > 1e-9:
            assert rects_overlap(a, b), (a, b)
            checked += 1
        else:
            grown = _clip_area(
                BoxObstacle(a.cx, a.cy, a.heading, a.half_len + 1e-6,
                            a.half_wid + 1e-6).corners(),
                BoxObstacle(b.cx, b.cy, b.heading, b.half_len + 1e-6,
                            b.half_wid + 1e-6).corners())
            if grown <= 1e-12:
                assert not rects_overlap(a, b), (a, b)
                checked += 1
    assert checked > 200


def test_edge_touching_rects_do_not_overlap():
    a = BoxObstacle(0.0, 0.0, 0.0, 1.0, 1.0)
    b = BoxObstacle(2.0, 0.0, 0.0, 1.0, 1.0)
    assert not rects_overlap(a, b)
    assert rects_overlap(a, BoxObstacle(1.99, 0.0, 0.0, 1.0, 1.0))


# ------------------------------------------------------- closest point

def test_closest_point_outside():
    obs = BoxObstacle(0.0, 0.0, 0.0, 1.0, 0.5)
    px, py, d = obs.closest_point(3.0, 0.2)
    assert (px, py) == pytest.approx((1.0, 0.2))
    assert d == pytest.approx(2.0)
    px, py, d = obs.closest_point(2.0, 1.5)
    assert (px, py) == pytest.approx((1.0, 0.5))
    assert d == pytest.approx(math.hypot(1.0, 1.0))


def test_closest_point_inside_pops_nearest_face():
    obs = BoxObstacle(0.0, 0.0, 0.0, 1.0, 0.5)
    px, py, d = obs.closest_point(0.1, 0.2)
    # y face is nearer (slack 0.3 < 0.9)
    assert (px, py) == pytest.approx((0.1, 0.5))
    assert d == pytest.approx(-0.3)


def test_corners_axis_aligned():
    obs = BoxObstacle(1.0, 2.0, 0.0, 0.5, 0.25)
    expect = {(1.5, 2.25), (1.5, 1.75), (0.5, 1.75), (0.5, 2.25)}
    assert {tuple(np.round(c, 9)) for c in obs.corners()} == expect


# ------------------------------------------------------------ band cost

def test_band_cost_zero_outside():
    assert band_cost(-1.0, 0.5) == 0.0
    assert band_cost_grad(-0.01, 0.5) == 0.0


def test_band_cost_continuity_at_joints():
    # at eps = 1e-12 the one-sided slope contributes < 1e-11, so any gap
    # beyond 1e-10 would be a genuine branch mismatch
    s = 0.5
    for c0 in (0.0, s):
        eps = 1e-12
        below = (band_cost(c0 - eps, s), band_cost_grad(c0 - eps, s))
        above = (band_cost(c0 + eps, s), band_cost_grad(c0 + eps, s))
        assert abs(above[0] - below[0]) < 1e-10
        assert abs(above[1] - below[1]) < 1e-10


def test_band_cost_grad_is_derivative():
    s = 0.5
    for c in (0.1, 0.3, 0.49, 0.7, 1.3):
        eps = 1e-7
        fd = (band_cost(c + eps, s) - band_cost(c - eps, s)) / (2 * eps)
        assert band_cost_grad(c, s) == pytest.approx(fd, rel=1e-5)


def test_band_cost_monotone_in_shortfall():
    s = 0.5
    cs = np.linspace(0.0, 2.0, 50)
    vals = [band_cost(float(c), s) for c in cs]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


# -------------------------------------------------------- pair building

def test_obstacle_pairs_selection(vspec):
    obs = BoxObstacle(0.0, 0.0, 0.0, 0.5, 0.5)
    # default inflation grows the box by half_wid = 1.5 on every side
    points = np.array([[3.0, 0.0], [10.0, 10.0], [0.5, 0.0]])
    pairs = obstacle_pairs(points, [obs], PARAMS, vspec, 0, 2)
    by_index = {p.index: p for p in pairs}
    assert set(by_index) == {0, 2}
    near = by_index[0]
    assert near.anchor == pytest.approx((2.0, 0.0))
    assert near.direction == pytest.approx((1.0, 0.0))
    assert near.band == PARAMS.clearance
    inside = by_index[2]
    assert inside.direction == pytest.approx((1.0, 0.0))
    assert np.hypot(*inside.direction) == pytest.approx(1.0)


def test_obstacle_pairs_respect_free_range(vspec):
    obs = BoxObstacle(0.0, 0.0, 0.0, 0.5, 0.5)
    points = np.tile([[1.0, 0.0]], (6, 1))
    pairs = obstacle_pairs(points, [obs], PARAMS, vspec, 2, 3)
    assert {p.index for p in pairs} == {2, 3}


def _single_tunnel(grid, library, maneuver=Maneuver.STRAIGHT, margin=3):
    requests = [MotionRequest(1, 1, maneuver, 0.0)]
    result = run(requests, grid, library)
    alloc = result.allocations[0]
    ledger = ReservationLedger(grid)
    for a in result.allocations:
        ledger.add(a.occupancy)
    return alloc, feasible_tunnel(alloc, margin, ledger)


def _reference_spline(traj, knot_dt=0.08):
    T = traj.duration
    n, dt = control_count(T, knot_dt)
    ts = np.linspace(0.0, T, max(12 * n, 60))
    pts = np.array([traj.sample_pose(t)[:2] for t in ts])
    return fit_spline(ts, pts, knot_dt,
                      start=traj.boundary_state(0.0),
                      end=traj.boundary_state(T)), n


def test_tunnel_wall_pairs_anchor_on_blocked_cells(grid, library, vspec):
    alloc, tunnel = _single_tunnel(grid, library)
    spline, n = _reference_spline(alloc.trajectory)
    times = spline.control_times()
    pairs = tunnel_wall_pairs(spline.control, times, alloc.trajectory.duration,
                              tunnel, PARAMS, vspec, 3, n - 4)
    assert pairs
    for p in pairs:
        assert 3 <= p.index <= n - 4
        assert np.hypot(*p.direction) == pytest.approx(1.0)
        q = spline.control[p.index]
        assert float((q - p.anchor) @ p.direction) > 0.0
        # the anchor cell itself must be outside the tunnel
        jt = grid.slab_of(tunnel.entry_time
                          + min(max(times[p.index], 0.0),
                                alloc.trajectory.duration))
        row = tunnel.slab_bits(jt)
        cell = grid.spatial_block(*p.anchor)
        bit = (cell[1] - 1) * grid.nx + (cell[0] - 1)
        assert not (int(row[bit >> 6]) >> (bit & 63)) & 1


# ------------------------------------------------------------- gradient

def test_refinement_cost_gradient_matches_fd(vspec):
    rng = np.random.default_rng(23)
    obs = BoxObstacle(0.3, -0.2, 0.4, 0.5, 0.4)
    weights = CostWeights()
    done = 0
    attempts = 0
    while done < 8 and attempts < 60:
        attempts += 1
        control = rng.normal(scale=1.2, size=(10, 2))
        pairs = obstacle_pairs(control, [obs], PARAMS, vspec, 0, 9)
        shortfalls = [p.band - float((control[p.index] - p.anchor) @ p.direction)
                      for p in pairs]
        if any(min(abs(c), abs(c - p.band)) < 1e-3
               for c, p in zip(shortfalls, pairs)):
            continue                      # too close to a cost joint for FD
        cost, grad = refinement_cost(control, 0.08, pairs, weights)
        eps = 1e-6
        for i, j in [(0, 0), (3, 1), (5, 0), (9, 1)]:
            bumped = control.copy()
            bumped[i, j] += eps
            up, _ = refinement_cost(bumped, 0.08, pairs, weights)
            bumped[i, j] -= 2 * eps
            dn, _ = refinement_cost(bumped, 0.08, pairs, weights)
            fd = (up - dn) / (2 * eps)
            assert grad[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-4)
        done += 1
    assert done == 8


# ------------------------------------------------------------ end to end

def test_refine_without_obstacles_keeps_reference(grid, library, vspec):
    alloc, tunnel = _single_tunnel(grid, library)
    res = refine(alloc.trajectory, tunnel, [], vspec)
    assert res.success
    assert res.checks == {"collision": True, "tunnel": True,
                          "speed": True, "acceleration": True}
    ts = np.linspace(0.0, alloc.trajectory.duration, 60)
    ref = np.array([alloc.trajectory.sample_pose(t)[:2] for t in ts])
    assert np.abs(res.spline.value(ts) - ref).max() < 1e-6


def test_refine_dodges_box_on_straight_lane(grid, library, vspec):
    alloc, tunnel = _single_tunnel(grid, library)
    obstacle = BoxObstacle(0.0, -0.3, 0.0, 0.3, 0.3)
    res = refine(alloc.trajectory, tunnel, [obstacle], vspec)
    assert res.success, res.message
    traj = alloc.trajectory
    # boundary state still pinned
    p0, v0, a0 = traj.boundary_state(0.0)
    assert np.abs(res.spline.value(0.0) - p0).max() < 1e-8
    assert np.abs(res.spline.derivative(0.0, 1) - v0).max() < 1e-8
    p1, v1, a1 = traj.boundary_state(traj.duration)
    assert np.abs(res.spline.value(res.spline.duration) - p1).max() < 1e-8
    assert np.abs(res.spline.derivative(res.spline.duration, 1) - v1).max() < 1e-8
    # the dodge actually moved the path
    ts = np.linspace(0.0, traj.duration, 120)
    ref = np.array([traj.sample_pose(t)[:2] for t in ts])
    assert np.abs(res.spline.value(ts) - ref).max() > 0.05
    assert res.pair_count > 0
    assert res.wall_ms > 0.0


def test_refine_left_turn_dodge(grid, library, vspec):
    alloc, tunnel = _single_tunnel(grid, library, Maneuver.LEFT)
    obstacle = BoxObstacle(-2.2, 1.0, 0.0, 0.3, 0.3)
    res = refine(alloc.trajectory, tunnel, [obstacle], vspec)
    assert res.success, res.message


def test_refine_reports_genuine_infeasibility(grid, library, vspec):
    """A block square on the arc cannot be dodged inside the tunnel."""
    alloc, tunnel = _single_tunnel(grid, library, Maneuver.LEFT)
    obstacle = BoxObstacle(-1.2, 0.6, 0.0, 0.3, 0.3)
    res = refine(alloc.trajectory, tunnel, [obstacle], vspec)
    assert not res.success
    assert res.restarts == 3
    assert res.message.startswith("checks failed")
    assert not all(res.checks.values())


def test_refine_honors_accel_limit(grid, library, vspec):
    alloc, _ = _single_tunnel(grid, library, Maneuver.LEFT)
    res = refine(alloc.trajectory, None, [], vspec, accel_limit=1.0)
    assert not res.success
    assert not res.checks["acceleration"]
    assert "acceleration" in res.message


def test_refine_iterate_log(grid, library, vspec):
    alloc, tunnel = _single_tunnel(grid, library)
    obstacle = BoxObstacle(0.0, -0.3, 0.0, 0.3, 0.3)
    res = refine(alloc.trajectory, tunnel, [obstacle], vspec,
                 keep_iterates=True)
    assert len(res.iterate_log) >= res.iterations > 0
    ts, pos, vel = res.sample(50)
    assert pos.shape == (50, 2) and vel.shape == (50, 2)
