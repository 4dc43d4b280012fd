"""Reference trajectory generation.

The in-zone path is decoupled into a geometric spline over arc-length-like
parameter s and a timing law s(t). The spline is a piecewise quintic fit to
the canonical line-arc path: it minimizes the integrated squared 2nd, 3rd
and 4th derivatives subject to exact endpoint positions and headings, C2
continuity at the piece joints, and a per-sample deviation box around the
canonical samples. Timing inside the zone is linear in s; the buffer stretch
upstream uses a quintic ramp meeting the zone profile with matching
position, speed and acceleration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .geometry import Maneuver, StandardPath

_GAUSS_N = 24


class PathSmoothingError(RuntimeError):
    pass


class BufferInfeasible(RuntimeError):
    pass


@dataclass
class PathSpline:
    """Piecewise quintic (x(s), y(s)) with uniform breakpoints."""

    breaks: np.ndarray            # (M+1,) knot locations in s
    coef_x: np.ndarray            # (M, 6) ascending powers of (s - break)
    coef_y: np.ndarray

    @property
    def n_pieces(self) -> int:
        return len(self.breaks) - 1

    @property
    def s_total(self) -> float:
        return float(self.breaks[-1])

    def _locate(self, s):
        s_arr = np.clip(np.atleast_1d(np.asarray(s, dtype=float)),
                        0.0, self.s_total)
        idx = np.clip(np.searchsorted(self.breaks, s_arr, side="right") - 1,
                      0, self.n_pieces - 1)
        return s_arr, idx

    def _eval(self, coef, s_arr, idx, deriv):
        u = s_arr - self.breaks[idx]
        out = np.zeros_like(s_arr)
        for p in range(5, deriv - 1, -1):
            fac = math.factorial(p) / math.factorial(p - deriv)
            out = out * u + coef[idx, p] * fac
        return out

    def value(self, s, deriv: int = 0):
        """(n, 2) array of the deriv-th derivative of (x, y) wrt s."""
        s_arr, idx = self._locate(s)
        vx = self._eval(self.coef_x, s_arr, idx, deriv)
        vy = self._eval(self.coef_y, s_arr, idx, deriv)
        out = np.stack([vx, vy], axis=1)
        return out if np.ndim(s) else out[0]

    def heading(self, s):
        d = self.value(s, deriv=1)
        d = np.atleast_2d(d)
        h = np.arctan2(d[:, 1], d[:, 0])
        return h if np.ndim(s) else float(h[0])

    def curvature(self, s):
        d1 = np.atleast_2d(self.value(s, 1))
        d2 = np.atleast_2d(self.value(s, 2))
        num = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        den = np.maximum(np.hypot(d1[:, 0], d1[:, 1]) ** 3, 1e-12)
        k = num / den
        return k if np.ndim(s) else float(k[0])

    def arc_length(self) -> float:
        """Realized curve length via fixed Gauss-Legendre quadrature."""
        nodes, weights = np.polynomial.legendre.leggauss(_GAUSS_N)
        total = 0.0
        for k in range(self.n_pieces):
            a, b = self.breaks[k], self.breaks[k + 1]
            s_pts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            d = self.value(s_pts, 1)
            total += 0.5 * (b - a) * float(np.sum(weights * np.hypot(d[:, 0], d[:, 1])))
        return total

    def energy(self, weights=(1.0, 1.0, 1.0)) -> float:
        """Integral of the weighted squared 2nd..4th derivatives."""
        nodes, gw = np.polynomial.legendre.leggauss(_GAUSS_N)
        total = 0.0
        for k in range(self.n_pieces):
            a, b = self.breaks[k], self.breaks[k + 1]
            s_pts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            for i, w in zip((2, 3, 4), weights):
                d = self.value(s_pts, i)
                total += w * 0.5 * (b - a) * float(
                    np.sum(gw * (d[:, 0] ** 2 + d[:, 1] ** 2)))
        return total


def _gram_block(L: float, weights) -> np.ndarray:
    """Energy Gram matrix of one piece in the ascending monomial basis."""
    G = np.zeros((6, 6))
    for i, w in zip((2, 3, 4), weights):
        if w == 0:
            continue
        for a in range(i, 6):
            fa = math.factorial(a) / math.factorial(a - i)
            for b in range(i, 6):
                fb = math.factorial(b) / math.factorial(b - i)
                p = a + b - 2 * i
                G[a, b] += w * fa * fb * L ** (p + 1) / (p + 1)
    return G


def _powers(u: float, deriv: int = 0) -> np.ndarray:
    row = np.zeros(6)
    for p in range(deriv, 6):
        row[p] = math.factorial(p) / math.factorial(p - deriv) * u ** (p - deriv)
    return row


def _solve_dim(H, A, b, G, h, reg: float = 0.0):
    """min c'Hc st Ac=b, Gc<=h via null-space elimination and a dense QP."""
    import cvxopt

    c_part, *_ = np.linalg.lstsq(A, b, rcond=None)
    N = null_space(A)
    if N.shape[1] == 0:
        return c_part
    P = N.T @ H @ N
    P = 0.5 * (P + P.T) + reg * np.eye(N.shape[1])
    q = N.T @ (H @ c_part)
    Gz = G @ N
    hz = h - G @ c_part
    cvxopt.solvers.options["show_progress"] = False
    sol = cvxopt.solvers.qp(cvxopt.matrix(P), cvxopt.matrix(q),
                            cvxopt.matrix(Gz), cvxopt.matrix(hz))
    if sol["status"] not in ("optimal", "unknown"):
        raise PathSmoothingError(f"QP failed with status {sol['status']}")
    z = np.asarray(sol["x"]).ravel()
    if sol["status"] == "unknown":
        # accept only if the returned point actually satisfies the box
        if (Gz @ z - hz).max() > 1e-7:
            raise PathSmoothingError("QP did not converge to a feasible point")
    return c_part + N @ z


def smooth_path(path: StandardPath, deviation_bound: float = 1.0,
                weights=(1.0, 1.0, 1.0), piece_length: float = 2.0) -> PathSpline:
    """Fit the smoothing spline around a canonical path.

    The deviation box |x(s_j) - x_j| <= deviation_bound is enforced per
    coordinate at every canonical sample (tightened by 1e-6 internally so
    the bound survives roundoff). Endpoint positions and headings are
    equality constraints, which keeps the junction poses exact.
    """
    if deviation_bound <= 0:
        raise PathSmoothingError("deviation bound must be positive")
    s_t = path.total_length
    M = max(1, int(round(s_t / piece_length)))
    breaks = np.linspace(0.0, s_t, M + 1)
    L = s_t / M
    n = 6 * M

    Hb = _gram_block(L, weights)
    H = np.zeros((n, n))
    for k in range(M):
        H[6 * k: 6 * k + 6, 6 * k: 6 * k + 6] = Hb

    ex, ey, eth = path.entry_pose
    xx, xy, xth = path.exit_pose

    rows, bx, by = [], [], []

    def eq(row, vx, vy):
        rows.append(row)
        bx.append(vx)
        by.append(vy)

    r = np.zeros(n)
    r[0:6] = _powers(0.0, 0)
    eq(r, ex, ey)
    r = np.zeros(n)
    r[0:6] = _powers(0.0, 1)
    eq(r, math.cos(eth), math.sin(eth))
    for k in range(M - 1):
        for d in range(3):
            r = np.zeros(n)
            r[6 * k: 6 * k + 6] = _powers(L, d)
            r[6 * (k + 1): 6 * (k + 1) + 6] = -_powers(0.0, d)
            eq(r, 0.0, 0.0)
    r = np.zeros(n)
    r[6 * (M - 1): 6 * M] = _powers(L, 0)
    eq(r, xx, xy)
    r = np.zeros(n)
    r[6 * (M - 1): 6 * M] = _powers(L, 1)
    eq(r, math.cos(xth), math.sin(xth))

    A = np.asarray(rows)
    bx = np.asarray(bx)
    by = np.asarray(by)

    samples_s = path.samples_s
    samples_xy = path.samples_xy
    bound = deviation_bound - 1e-6
    G_rows, hx, hy = [], [], []
    for s_j, (px, py) in zip(samples_s, samples_xy):
        k = min(int(s_j / L), M - 1)
        r = np.zeros(n)
        r[6 * k: 6 * k + 6] = _powers(s_j - breaks[k], 0)
        G_rows.append(r)
        hx.append(px + bound)
        hy.append(py + bound)
        G_rows.append(-r)
        hx.append(-(px - bound))
        hy.append(-(py - bound))
    G = np.asarray(G_rows)

    cx = _solve_dim(H, A, bx, G, np.asarray(hx))
    cy = _solve_dim(H, A, by, G, np.asarray(hy))
    return PathSpline(breaks=breaks,
                      coef_x=cx.reshape(M, 6),
                      coef_y=cy.reshape(M, 6))


@dataclass(frozen=True)
class SpeedProfile:
    """Linear in-zone timing: s(t) = rate * t for t in [0, duration]."""

    rate: float
    duration: float

    @property
    def s_total(self) -> float:
        return self.rate * self.duration

    def s(self, t):
        return self.rate * np.asarray(t, dtype=float)

    def s_dot(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.rate)


def make_speed_profile(s_parameter: float, s_realized: float,
                       v_ref: float) -> SpeedProfile:
    """Timing that traverses parameter length s_parameter in s_realized/v_ref.

    The rate is scaled by s_parameter / s_realized so the mean ground speed
    equals v_ref even though the spline parameter is only approximately arc
    length.
    """
    if min(s_parameter, s_realized, v_ref) <= 0:
        raise ValueError("lengths and reference speed must be positive")
    return SpeedProfile(rate=s_parameter / s_realized * v_ref,
                        duration=s_realized / v_ref)


@dataclass(frozen=True)
class BufferProfile:
    """Quintic distance ramp s_B(t) over [0, horizon] covering ``distance``."""

    coef: tuple                   # ascending powers, length 6
    horizon: float
    distance: float

    def s(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for c in reversed(self.coef):
            out = out * t + c
        return out

    def v(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for p in range(5, 0, -1):
            out = out * t + p * self.coef[p]
        return out

    def a(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for p in range(5, 1, -1):
            out = out * t + p * (p - 1) * self.coef[p]
        return out


def solve_buffer_profile(distance: float, v0: float, a0: float, ve: float,
                         ae: float, horizon: float) -> BufferProfile:
    """Closed-form quintic with the six boundary conditions.

    s(0) = 0, s'(0) = v0, s''(0) = a0, s(T) = distance, s'(T) = ve,
    s''(T) = ae.
    """
    T = horizon
    if T <= 0:
        raise ValueError("horizon must be positive")
    L = distance
    c0 = 0.0
    c1 = v0
    c2 = a0 / 2.0
    c3 = (20 * L - 3 * T * T * a0 + T * T * ae - 12 * T * v0 - 8 * T * ve) / (2 * T ** 3)
    c4 = (-30 * L + 3 * T * T * a0 - 2 * T * T * ae + 16 * T * v0 + 14 * T * ve) / (2 * T ** 4)
    c5 = (12 * L - T * T * a0 + T * T * ae - 6 * T * v0 - 6 * T * ve) / (2 * T ** 5)
    return BufferProfile(coef=(c0, c1, c2, c3, c4, c5),
                         horizon=T, distance=distance)


def profile_within_limits(profile: BufferProfile, spec,
                          check_step: float = 1e-3, tol: float = 1e-9) -> bool:
    t = np.arange(0.0, profile.horizon + check_step / 2, check_step)
    v = profile.v(t)
    a = profile.a(t)
    return bool((v >= -tol).all() and (v <= spec.v_max + tol).all()
                and (a >= spec.a_min - tol).all() and (a <= spec.a_max + tol).all())


def find_buffer_time(distance: float, v0: float, a0: float, ve: float,
                     ae: float, spec, time_grid: float = 0.1,
                     t_max: float = 60.0) -> BufferProfile:
    """Smallest horizon on the 0.1 s grid whose ramp respects the limits.

    Feasibility is checked on a 1 ms grid. Raises BufferInfeasible when no
    horizon up to t_max works (e.g. the exit speed is unreachable within the
    distance under the acceleration bounds).
    """
    if distance <= 0:
        raise ValueError("distance must be positive")
    n = int(round(t_max / time_grid))
    for i in range(1, n + 1):
        T = i * time_grid
        prof = solve_buffer_profile(distance, v0, a0, ve, ae, T)
        if profile_within_limits(prof, spec):
            return prof
    raise BufferInfeasible(
        f"no feasible ramp over {distance:.2f} m from v={v0:.2f} to v={ve:.2f}"
        f" within {t_max:.1f} s")


@dataclass
class Trajectory:
    """In-zone reference trajectory of one crossing.

    Pose sampling is strict on [0, duration]; the occupancy machinery uses
    the extended window [-lead, duration + tail] during which the inflated
    body overlaps the zone while the center is outside it.
    """

    path: PathSpline
    profile: SpeedProfile
    road_from: int
    road_to: int
    maneuver: Maneuver
    entry_pose: tuple
    exit_pose: tuple
    lead_time: float = 0.0
    tail_time: float = 0.0
    owner: object = None
    _occupancy_memo: dict = field(default_factory=dict, repr=False)

    @property
    def duration(self) -> float:
        return self.profile.duration

    @property
    def occupancy_window(self):
        return self.lead_time, self.tail_time

    @property
    def v_entry(self) -> float:
        d = self.path.value(0.0, 1)
        return self.profile.rate * float(np.hypot(d[0], d[1]))

    @property
    def v_exit(self) -> float:
        d = self.path.value(self.path.s_total, 1)
        return self.profile.rate * float(np.hypot(d[0], d[1]))

    def sample_pose(self, t: float):
        """(x, y, theta) at relative time t in [0, duration]."""
        if t < -1e-9 or t > self.duration + 1e-9:
            raise ValueError(f"t={t:.4f} outside [0, {self.duration:.4f}]")
        t = min(max(t, 0.0), self.duration)
        s = float(self.profile.s(t))
        p = self.path.value(s)
        return float(p[0]), float(p[1]), self.path.heading(s)

    def sample_state(self, t: float):
        """(x, y, theta, ground speed, ground acceleration) at time t."""
        x, y, th = self.sample_pose(t)
        s = float(self.profile.s(min(max(t, 0.0), self.duration)))
        d1 = self.path.value(s, 1)
        d2 = self.path.value(s, 2)
        norm1 = float(np.hypot(d1[0], d1[1]))
        v = self.profile.rate * norm1
        # d|h'|/ds resolved along the tangent; s_ddot = 0 for the linear law
        if norm1 > 1e-9:
            dn = float((d1[0] * d2[0] + d1[1] * d2[1]) / norm1)
        else:
            dn = 0.0
        a = self.profile.rate ** 2 * dn
        return x, y, th, v, a

    def curvature_at(self, t: float) -> float:
        s = float(self.profile.s(min(max(t, 0.0), self.duration)))
        return float(self.path.curvature(s))

    def boundary_state(self, t: float):
        """(position, velocity, acceleration) as 2-vectors, for clamping."""
        x, y, _ = self.sample_pose(t)
        s = float(self.profile.s(min(max(t, 0.0), self.duration)))
        d1 = np.asarray(self.path.value(s, 1), dtype=float)
        d2 = np.asarray(self.path.value(s, 2), dtype=float)
        rate = self.profile.rate
        return (np.array([x, y]), d1 * rate, d2 * rate * rate)

    def occupancy_pose(self, tau: float):
        """Pose for occupancy sampling on [-lead, duration + tail]."""
        if tau < 0.0:
            x, y, th = self.entry_pose
            v = self.v_entry
            return x + v * tau * math.cos(th), y + v * tau * math.sin(th), th
        if tau > self.duration:
            x, y, th = self.exit_pose
            v = self.v_exit
            dt_out = tau - self.duration
            return x + v * dt_out * math.cos(th), y + v * dt_out * math.sin(th), th
        return self.sample_pose(tau)


def build_trajectory(config, vspec, road: int, maneuver, v_ref: float,
                     deviation_bound: float = 1.0, weights=(1.0, 1.0, 1.0),
                     sample_ds: float = 0.5, piece_length: float = 2.0) -> Trajectory:
    """Full in-zone pipeline: canonical path, smoothing, linear timing."""
    from .geometry import standard_path

    base = standard_path(config, road, maneuver, sample_ds=sample_ds)
    spline = smooth_path(base, deviation_bound, weights, piece_length)
    s_n = spline.arc_length()
    profile = make_speed_profile(spline.s_total, s_n, v_ref)

    margin = vspec.length / 2.0 + vspec.r_long
    rate = profile.rate  # ground speed at the clamped endpoints
    traj = Trajectory(
        path=spline,
        profile=profile,
        road_from=road,
        road_to=base.road_to,
        maneuver=base.maneuver,
        entry_pose=base.entry_pose,
        exit_pose=base.exit_pose,
        lead_time=margin / max(rate, 1e-6),
        tail_time=margin / max(rate, 1e-6),
    )
    return traj


def max_steer_needed(traj: Trajectory, wheelbase: float,
                     n_check: int = 400) -> float:
    s = np.linspace(0.0, traj.path.s_total, n_check)
    k = np.abs(traj.path.curvature(s))
    return float(np.max(np.arctan(wheelbase * k)))


def trajectory_to_csv(traj: Trajectory, path, step: float = 0.02):
    """Time-sampled trajectory with fixed 6-decimal formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "theta", "v", "a"])
        t = 0.0
        while t < traj.duration + step / 2:
            tc = min(t, traj.duration)
            x, y, th, v, a = traj.sample_state(tc)
            w.writerow([f"{tc:.6f}", f"{x:.6f}", f"{y:.6f}",
                        f"{th:.6f}", f"{v:.6f}", f"{a:.6f}"])
            t += step
