"""Uniform cubic B-spline machinery, checked against scipy's BSpline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from crossplan.bspline import (MIN_CONTROL, CubicBSpline, basis_row,
                               clamped_ends, control_count, fit_spline)


def scipy_twin(sp: CubicBSpline) -> BSpline:
    """The same spline in scipy's knot convention."""
    n = sp.n_control
    knots = (np.arange(n + 4) - 3) * sp.knot_dt
    return BSpline(knots, sp.control, 3)


def random_spline(rng, n=12, dt=0.08, dim=2) -> CubicBSpline:
    return CubicBSpline(dt, rng.normal(size=(n, dim)) * 3.0)


# ---------------------------------------------------------------- algebra

def test_control_count_cases():
    assert control_count(1.0, 0.08) == (15, pytest.approx(1.0 / 12))
    n, dt = control_count(0.2, 0.08)
    assert n == MIN_CONTROL and dt == pytest.approx(0.05)
    n, dt = control_count(1.169412, 0.08)
    assert n == 17 and dt == pytest.approx(1.169412 / 14)
    with pytest.raises(ValueError):
        control_count(0.0, 0.08)


def test_duration_follows_count():
    sp = CubicBSpline(0.1, np.zeros((9, 2)))
    assert sp.duration == pytest.approx(0.6)
    assert sp.n_control == 9 and sp.dim == 2


def test_too_few_control_points():
    with pytest.raises(ValueError):
        CubicBSpline(0.1, np.zeros((3, 2)))


def test_one_dimensional_control_reshaped():
    sp = CubicBSpline(0.1, np.arange(6.0))
    assert sp.dim == 1
    assert sp.value(0.05).shape == (1,)


def test_basis_partition_of_unity():
    for t in np.linspace(0.0, 0.9, 13):
        seg, w = basis_row(float(t), 12, 0.1)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert (w >= -1e-12).all()


def test_difference_point_shapes():
    sp = CubicBSpline(0.1, np.random.default_rng(0).normal(size=(10, 2)))
    assert sp.velocity_points().shape == (9, 2)
    assert sp.acceleration_points().shape == (8, 2)
    assert sp.jerk_points().shape == (7, 2)
    assert np.allclose(sp.control_times(),
                       (np.arange(10) - 1) * 0.1)


# ----------------------------------------------------------- scipy oracle

@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_matches_scipy_bspline(order):
    rng = np.random.default_rng(42)
    for _ in range(5):
        sp = random_spline(rng)
        twin = scipy_twin(sp).derivative(order) if order else scipy_twin(sp)
        ts = rng.uniform(0.0, sp.duration * (1 - 1e-12), size=40)
        ours = sp.value(ts) if order == 0 else sp.derivative(ts, order)
        assert np.abs(ours - twin(ts)).max() < 1e-10


def test_scalar_and_vector_evaluation_agree():
    sp = random_spline(np.random.default_rng(3))
    ts = np.array([0.0, 0.123, 0.5])
    vec = sp.value(ts)
    for t, row in zip(ts, vec):
        assert np.allclose(sp.value(float(t)), row)
    with pytest.raises(ValueError):
        sp.derivative(0.1, order=4)


def test_evaluation_clips_to_domain():
    sp = random_spline(np.random.default_rng(9))
    end = sp.value(sp.duration)
    assert np.isfinite(end).all()
    # just past the end lands on the last segment's u >= 1 extension
    assert np.allclose(sp.value(sp.duration), end)


# ------------------------------------------------------------ clamped ends

def test_clamped_ends_reproduce_boundary_state():
    dt = 0.08
    pos, vel, acc = np.array([1.0, -2.0]), np.array([3.0, 0.5]), np.array([-4.0, 2.0])
    head = clamped_ends(pos, vel, acc, dt)
    rng = np.random.default_rng(1)
    control = np.vstack([head, rng.normal(size=(5, 2))])
    sp = CubicBSpline(dt, control)
    assert np.abs(sp.value(0.0) - pos).max() < 1e-12
    assert np.abs(sp.derivative(0.0, 1) - vel).max() < 1e-12
    assert np.abs(sp.derivative(0.0, 2) - acc).max() < 1e-12


def test_fit_spline_pins_both_boundaries():
    rng = np.random.default_rng(7)
    times = np.linspace(0.0, 1.2, 80)
    pts = np.stack([np.sin(times * 3), np.cos(times * 2)], axis=1)
    start = (pts[0], np.array([3.0, 0.0]), np.array([0.0, -4.0]))
    end = (pts[-1], np.array([3 * np.cos(3.6), -2 * np.sin(2.4)]),
           np.array([-9 * np.sin(3.6), -4 * np.cos(2.4)]))
    sp = fit_spline(times, pts, 0.08, start=start, end=end)
    assert np.abs(sp.value(0.0) - start[0]).max() < 1e-9
    assert np.abs(sp.derivative(0.0, 1) - start[1]).max() < 1e-9
    assert np.abs(sp.derivative(0.0, 2) - start[2]).max() < 1e-9
    assert np.abs(sp.value(sp.duration) - end[0]).max() < 1e-9
    assert np.abs(sp.derivative(sp.duration, 1) - end[1]).max() < 1e-9
    assert np.abs(sp.derivative(sp.duration, 2) - end[2]).max() < 1e-9


def test_fit_spline_reproduces_cubic_exactly():
    """A cubic polynomial lies in the spline space, so the fit is exact."""
    a = np.array([[0.5, -1.0], [2.0, 0.3], [-0.7, 1.1], [0.2, -0.4]])

    def poly(t):
        t = np.asarray(t, dtype=float)[..., None]
        return a[0] + a[1] * t + a[2] * t ** 2 + a[3] * t ** 3

    def dpoly(t):
        return a[1] + 2 * a[2] * t + 3 * a[3] * t ** 2

    def ddpoly(t):
        return 2 * a[2] + 6 * a[3] * t

    times = np.linspace(0.0, 2.0, 60)
    pts = poly(times)
    sp = fit_spline(times, pts, 0.25,
                    start=(poly(0.0), dpoly(0.0), ddpoly(0.0)),
                    end=(poly(2.0), dpoly(2.0), ddpoly(2.0)))
    check = np.linspace(0.0, 2.0, 173)
    assert np.abs(sp.value(check) - poly(check)).max() < 1e-9


# ---------------------------------------------------------------- locality

@given(i=st.integers(0, 11), delta=st.floats(-5, 5, allow_nan=False))
@settings(max_examples=40, deadline=None)
def test_control_point_support_is_local(i, delta):
    base = random_spline(np.random.default_rng(5), n=12, dt=0.1)
    moved = CubicBSpline(0.1, base.control.copy())
    moved.control[i, 0] += delta
    lo = (i - 3) * 0.1
    hi = (i + 1) * 0.1
    ts = np.linspace(0.0, base.duration, 91)
    outside = (ts < lo - 1e-9) | (ts >= hi - 1e-9)
    if outside.any():
        assert np.abs(moved.value(ts[outside])
                      - base.value(ts[outside])).max() < 1e-12


def test_value_within_active_hull():
    """Nonnegative weights summing to one keep each sample in the hull."""
    sp = random_spline(np.random.default_rng(11), n=10, dt=0.1)
    ts = np.linspace(0.0, sp.duration * (1 - 1e-12), 50)
    for t in ts:
        seg, w = basis_row(float(t), sp.n_control, sp.knot_dt)
        window = sp.control[seg: seg + 4]
        val = sp.value(float(t))
        assert (val <= window.max(axis=0) + 1e-12).all()
        assert (val >= window.min(axis=0) - 1e-12).all()
