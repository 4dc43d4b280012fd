"""Uniform cubic B-splines in matrix form.

The refinement stage optimizes control points directly, so everything here
is written around the control polygon: finite differences of control points
give the velocity, acceleration and jerk control points, and the spline
stays inside the convex hull of each segment's four points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# segment basis: p(u) = [1 u u^2 u^3] @ BASIS @ (Q_i..Q_i+3), u in [0, 1)
BASIS = np.array([
    [1.0, 4.0, 1.0, 0.0],
    [-3.0, 0.0, 3.0, 0.0],
    [3.0, -6.0, 3.0, 0.0],
    [-1.0, 3.0, -3.0, 1.0],
]) / 6.0

MIN_CONTROL = 7


def control_count(duration: float, knot_dt: float,
                  min_count: int = MIN_CONTROL):
    """Number of control points and the adjusted knot spacing.

    The count comes from the requested spacing; the spacing is then scaled
    so the spline domain is exactly ``duration`` even when the minimum
    count forces more points than the spacing alone would.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = max(min_count, int(math.floor(duration / knot_dt + 1e-9)) + 3)
    return n, duration / (n - 3)


def clamped_ends(pos, vel, acc, knot_dt: float) -> np.ndarray:
    """Three control points pinning position, velocity and acceleration.

    Returns rows (Q0, Q1, Q2) such that the uniform cubic spline they start
    has exactly the requested boundary derivatives at the segment start.
    """
    p = np.asarray(pos, dtype=float)
    v = np.asarray(vel, dtype=float)
    a = np.asarray(acc, dtype=float)
    q1 = p - a * knot_dt ** 2 / 6.0
    q0 = p - v * knot_dt + a * knot_dt ** 2 / 3.0
    q2 = p + v * knot_dt + a * knot_dt ** 2 / 3.0
    return np.stack([q0, q1, q2])


@dataclass
class CubicBSpline:
    knot_dt: float
    control: np.ndarray       # (n, dim)

    def __post_init__(self):
        self.control = np.asarray(self.control, dtype=float)
        if self.control.ndim == 1:
            self.control = self.control[:, None]
        if self.control.shape[0] < 4:
            raise ValueError("need at least 4 control points")

    @property
    def n_control(self) -> int:
        return self.control.shape[0]

    @property
    def dim(self) -> int:
        return self.control.shape[1]

    @property
    def duration(self) -> float:
        return (self.n_control - 3) * self.knot_dt

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        seg = np.clip(np.floor(t / self.knot_dt).astype(int),
                      0, self.n_control - 4)
        u = t / self.knot_dt - seg
        return t.ndim == 0, np.atleast_1d(seg), np.atleast_1d(u)

    def _eval(self, t, weights_of_u):
        scalar, seg, u = self._locate(t)
        idx = seg[:, None] + np.arange(4)[None, :]
        w = weights_of_u(u)                      # (m, 4)
        out = np.einsum("mk,mkd->md", w, self.control[idx])
        return out[0] if scalar else out

    def value(self, t):
        return self._eval(t, lambda u: np.stack(
            [np.ones_like(u), u, u ** 2, u ** 3], axis=1) @ BASIS)

    def derivative(self, t, order: int = 1):
        if order == 1:
            f = lambda u: np.stack(
                [np.zeros_like(u), np.ones_like(u), 2 * u, 3 * u ** 2],
                axis=1) @ BASIS / self.knot_dt
        elif order == 2:
            f = lambda u: np.stack(
                [np.zeros_like(u), np.zeros_like(u), 2 * np.ones_like(u),
                 6 * u], axis=1) @ BASIS / self.knot_dt ** 2
        elif order == 3:
            f = lambda u: np.stack(
                [np.zeros_like(u), np.zeros_like(u), np.zeros_like(u),
                 6 * np.ones_like(u)], axis=1) @ BASIS / self.knot_dt ** 3
        else:
            raise ValueError("order must be 1, 2 or 3")
        return self._eval(t, f)

    def velocity_points(self) -> np.ndarray:
        return np.diff(self.control, axis=0) / self.knot_dt

    def acceleration_points(self) -> np.ndarray:
        return np.diff(self.control, n=2, axis=0) / self.knot_dt ** 2

    def jerk_points(self) -> np.ndarray:
        return np.diff(self.control, n=3, axis=0) / self.knot_dt ** 3

    def control_times(self) -> np.ndarray:
        """Nominal time of each control point: Q_i sits near (i-1)*dt."""
        return (np.arange(self.n_control) - 1) * self.knot_dt


def basis_row(t, n_control: int, knot_dt: float):
    """Sparse basis weights at time t: (first control index, 4 weights)."""
    seg = min(max(int(math.floor(t / knot_dt)), 0), n_control - 4)
    u = t / knot_dt - seg
    w = np.array([1.0, u, u * u, u ** 3]) @ BASIS
    return seg, w


def fit_spline(times, points, knot_dt: float, start=None, end=None,
               min_count: int = MIN_CONTROL) -> CubicBSpline:
    """Least-squares control points through (times, points) samples.

    ``start``/``end`` are optional (pos, vel, acc) boundary triples; when
    given, the first and last three control points are pinned to reproduce
    them exactly and only the interior is fitted.
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    duration = float(times[-1])
    n, dt = control_count(duration, knot_dt, min_count)

    rows = np.zeros((len(times), n))
    for r, t in enumerate(times):
        seg, w = basis_row(t, n, dt)
        rows[r, seg: seg + 4] = w

    fixed = np.zeros(n, dtype=bool)
    q = np.zeros((n, points.shape[1]))
    if start is not None:
        q[0:3] = clamped_ends(*start, dt)
        fixed[0:3] = True
    if end is not None:
        # same stencil as the start, anchored on the last segment's u = 1
        p, v, a = (np.asarray(x, dtype=float) for x in end)
        q[n - 2] = p - a * dt ** 2 / 6.0
        q[n - 3] = p - v * dt + a * dt ** 2 / 3.0
        q[n - 1] = p + v * dt + a * dt ** 2 / 3.0
        fixed[n - 3: n] = True

    free = ~fixed
    if free.any():
        rhs = points - rows[:, fixed] @ q[fixed]
        sol, *_ = np.linalg.lstsq(rows[:, free], rhs, rcond=None)
        q[free] = sol
    return CubicBSpline(dt, q)
