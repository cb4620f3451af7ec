"""Kinematic bicycle model for small differential-steered cars.

State layout (numpy array of 5 floats, used across the package):

    [x, y, heading, speed, steering]

x, y in meters (body center), heading in radians CCW from +x, speed in m/s
(non-negative), steering is the front-wheel angle in radians. Inputs are
``[accel, steer_rate]`` (m/s^2, rad/s). The continuous model is

    x'       = v cos(heading + beta)
    y'       = v sin(heading + beta)
    heading' = v / wheelbase * tan(steering) * cos(beta)
    v'       = accel
    steering' = steer_rate

with the slip angle beta = atan(tan(steering) * rear_to_cg / wheelbase),
i.e. velocities are taken at the geometric center, not the rear axle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# State vector indices.
IX, IY, IHEADING, ISPEED, ISTEER = range(5)


@dataclass(frozen=True)
class VehicleParams:
    """Physical limits and footprint of one vehicle (defaults: cm-scale car)."""

    wheelbase: float = 0.16          # front-to-rear axle distance [m]
    rear_to_cg: float = 0.08        # rear axle to body center [m]
    body_length: float = 0.2
    body_width: float = 0.1
    n_circles: int = 3               # circles covering the footprint
    v_max: float = 1.0               # speed clamp [m/s]
    a_min: float = -5.0              # input box [m/s^2]
    a_max: float = 5.0
    steer_rate_min: float = -0.5 * math.pi   # input box [rad/s]
    steer_rate_max: float = 0.5 * math.pi
    delta_max: float = 0.25 * math.pi        # steering clamp [rad]

    @property
    def input_low(self) -> np.ndarray:
        return np.array([self.a_min, self.steer_rate_min])

    @property
    def input_high(self) -> np.ndarray:
        return np.array([self.a_max, self.steer_rate_max])


def slip_angle(steering: float, params: VehicleParams) -> float:
    """Slip angle beta of the body-center velocity for a steering angle."""
    return math.atan(math.tan(steering) * params.rear_to_cg / params.wheelbase)


def clamp_input(control, params: VehicleParams) -> np.ndarray:
    """Clamp ``[accel, steer_rate]`` to the input box. Idempotent."""
    u = np.asarray(control, dtype=float)
    return np.array([
        min(max(u[0], params.a_min), params.a_max),
        min(max(u[1], params.steer_rate_min), params.steer_rate_max),
    ])


def derivative(state, control, params: VehicleParams) -> np.ndarray:
    """Time derivative of the state under a (not clamped) control input."""
    x, y, th, v, de = (float(s) for s in state)
    ua, us = float(control[0]), float(control[1])
    beta = math.atan(math.tan(de) * params.rear_to_cg / params.wheelbase)
    return np.array([
        v * math.cos(th + beta),
        v * math.sin(th + beta),
        v / params.wheelbase * math.tan(de) * math.cos(beta),
        ua,
        us,
    ])


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


def _deriv_scalar(x, y, th, v, de, ua, us, k_r, inv_wb):
    beta = math.atan(math.tan(de) * k_r)
    return (v * math.cos(th + beta),
            v * math.sin(th + beta),
            v * inv_wb * math.tan(de) * math.cos(beta),
            ua,
            us)


def step(state, control, params: VehicleParams, dt: float) -> np.ndarray:
    """One control interval: clamp the input to its box, integrate the model
    with classical RK4 holding the input constant, then clamp speed to
    [0, v_max], steering to +-delta_max, and wrap the heading to (-pi, pi].
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    ua = min(max(float(control[0]), params.a_min), params.a_max)
    us = min(max(float(control[1]), params.steer_rate_min), params.steer_rate_max)
    k_r = params.rear_to_cg / params.wheelbase
    inv_wb = 1.0 / params.wheelbase
    s0 = tuple(float(v) for v in state)

    k1 = _deriv_scalar(*s0, ua, us, k_r, inv_wb)
    s1 = tuple(a + 0.5 * dt * b for a, b in zip(s0, k1))
    k2 = _deriv_scalar(*s1, ua, us, k_r, inv_wb)
    s2 = tuple(a + 0.5 * dt * b for a, b in zip(s0, k2))
    k3 = _deriv_scalar(*s2, ua, us, k_r, inv_wb)
    s3 = tuple(a + dt * b for a, b in zip(s0, k3))
    k4 = _deriv_scalar(*s3, ua, us, k_r, inv_wb)

    out = [a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
           for a, b1, b2, b3, b4 in zip(s0, k1, k2, k3, k4)]
    out[IHEADING] = wrap_angle(out[IHEADING])
    out[ISPEED] = min(max(out[ISPEED], 0.0), params.v_max)
    out[ISTEER] = min(max(out[ISTEER], -params.delta_max), params.delta_max)
    return np.array(out)
