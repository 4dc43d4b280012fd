"""Vehicle description, kinematic bicycle integration and noise models."""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_STEP = 0.02


@dataclass(frozen=True)
class VehicleSpec:
    """Physical body, actuation limits and safety margins.

    length/width describe the body rectangle; r_long/r_lat inflate it for
    occupancy purposes. The actuation limits are scenario parameters; the
    defaults accommodate reaching 8 m/s within an 8 m buffer from standstill
    and the tight default right-turn radius.
    """

    length: float = 4.0
    width: float = 2.0
    wheelbase: float = 2.7
    a_min: float = -6.0
    a_max: float = 6.0
    v_max: float = 10.0
    delta_max: float = 1.1
    r_long: float = 0.5
    r_lat: float = 0.5

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0 or self.wheelbase <= 0:
            raise ValueError("body dimensions must be positive")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError("need a_min < 0 < a_max")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if not (0 < self.delta_max < math.pi / 2):
            raise ValueError("delta_max must lie in (0, pi/2)")
        if self.r_long < 0 or self.r_lat < 0:
            raise ValueError("safety margins must be nonnegative")

    @property
    def half_len(self) -> float:
        """Inflated half length (body plus longitudinal margin)."""
        return self.length / 2.0 + self.r_long

    @property
    def half_wid(self) -> float:
        return self.width / 2.0 + self.r_lat

    @property
    def half_diagonal(self) -> float:
        """Half diagonal of the bare body rectangle."""
        return math.hypot(self.length, self.width) / 2.0

    def key(self):
        return (self.length, self.width, self.r_long, self.r_lat)


@dataclass
class VehicleState:
    x: float
    y: float
    theta: float
    v: float


@dataclass
class ControlInput:
    accel: float
    steer: float


def _deriv(x, y, theta, v, accel, tan_steer, wheelbase):
    return (v * math.cos(theta), v * math.sin(theta),
            v * tan_steer / wheelbase, accel)


def step(state: VehicleState, control: ControlInput, spec: VehicleSpec,
         h: float = DEFAULT_STEP) -> VehicleState:
    """One fixed-step RK4 update of the kinematic bicycle.

    Controls are clamped to the actuation box and held constant over the
    step; the speed is clamped to [0, v_max] afterwards.
    """
    a = min(max(control.accel, spec.a_min), spec.a_max)
    d = min(max(control.steer, -spec.delta_max), spec.delta_max)
    td = math.tan(d)
    L = spec.wheelbase

    k1 = _deriv(state.x, state.y, state.theta, state.v, a, td, L)
    k2 = _deriv(state.x + 0.5 * h * k1[0], state.y + 0.5 * h * k1[1],
                state.theta + 0.5 * h * k1[2], state.v + 0.5 * h * k1[3], a, td, L)
    k3 = _deriv(state.x + 0.5 * h * k2[0], state.y + 0.5 * h * k2[1],
                state.theta + 0.5 * h * k2[2], state.v + 0.5 * h * k2[3], a, td, L)
    k4 = _deriv(state.x + h * k3[0], state.y + h * k3[1],
                state.theta + h * k3[2], state.v + h * k3[3], a, td, L)

    v_new = state.v + h / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    return VehicleState(
        x=state.x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        y=state.y + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        theta=state.theta + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        v=min(max(v_new, 0.0), spec.v_max),
    )


def check_limits(state: VehicleState, control: ControlInput,
                 spec: VehicleSpec, tol: float = 1e-9):
    """List of limit violations (empty when everything is inside bounds)."""
    issues = []
    if control.accel < spec.a_min - tol or control.accel > spec.a_max + tol:
        issues.append(f"accel {control.accel:.3f} outside [{spec.a_min}, {spec.a_max}]")
    if abs(control.steer) > spec.delta_max + tol:
        issues.append(f"steer {control.steer:.3f} outside +-{spec.delta_max}")
    if state.v < -tol or state.v > spec.v_max + tol:
        issues.append(f"speed {state.v:.3f} outside [0, {spec.v_max}]")
    return issues


@dataclass(frozen=True)
class NoiseConfig:
    """Standard deviations of the pose and control disturbances."""

    sigma_x: float = 0.05
    sigma_y: float = 0.05
    sigma_theta: float = 0.01
    sigma_a: float = 0.1
    sigma_delta: float = 0.01

    def __post_init__(self):
        for name in ("sigma_x", "sigma_y", "sigma_theta", "sigma_a", "sigma_delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def disabled(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


def perturb_pose(state: VehicleState, noise: NoiseConfig, rng) -> VehicleState:
    """Measured pose: additive zero-mean Gaussian noise on x, y, theta.

    Draws are always consumed so a run keeps the same noise stream no matter
    which sigmas are zero; with all-zero sigmas the output equals the input
    bit for bit.
    """
    z = rng.standard_normal(3)
    return VehicleState(
        x=state.x + noise.sigma_x * z[0],
        y=state.y + noise.sigma_y * z[1],
        theta=state.theta + noise.sigma_theta * z[2],
        v=state.v,
    )


def perturb_control(control: ControlInput, noise: NoiseConfig, rng) -> ControlInput:
    z = rng.standard_normal(2)
    return ControlInput(
        accel=control.accel + noise.sigma_a * z[0],
        steer=control.steer + noise.sigma_delta * z[1],
    )
