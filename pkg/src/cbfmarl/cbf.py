"""Barrier functions for road keeping and vehicle separation.

Each barrier h is built from the circle covering of the rectangular
footprints: keeping every covering circle at positive clearance keeps the
rectangle clear. Because the bicycle model controls acceleration and
steering rate, h has relative degree 2: the control input appears in the
second time derivative. We expose, for each constraint,

    h, h_dot, and h_ddot(u) = ddot_drift + sum_v coeffs[v] . u_v

where the sum runs over the involved vehicles and each coefficient is a
2-vector multiplying that vehicle's [accel, steer_rate]. The discrete
one-step constraint value is

    psi(u) = dt * h_dot + dt^2/2 * h_ddot(u) + gamma * h + remainder

and the constraint is satisfied when psi >= 0. Derivatives are taken with
the active minimizer frozen (active covering circle, active boundary
segment or vertex, active circle pair), which makes them exact away from
minimizer switches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleParams
from .geometry import CircleDecomposition, Polyline

ROAD_LEFT = "road_L"
ROAD_RIGHT = "road_R"
VEHICLE_PAIR = "veh"


@dataclass(frozen=True)
class CbfConfig:
    """Parameters of the discrete barrier condition."""

    gamma: float = 1.0          # linear class-K gain on h
    remainder: float = 0.0      # constant discretization remainder term
    dt: float = 0.1             # control interval [s]


@dataclass
class VehicleKinematics:
    """Per-circle kinematic quantities of one vehicle, reused by every
    constraint that involves it. All arrays are (n_circles, 2)."""

    centers: np.ndarray         # circle centers
    cdot: np.ndarray            # center velocities
    drift: np.ndarray           # input-independent part of center accelerations
    ga: np.ndarray              # center-acceleration coefficient of accel input
    gs: np.ndarray              # center-acceleration coefficient of steer-rate input


def vehicle_kinematics(state, decomp: CircleDecomposition,
                       params: VehicleParams) -> VehicleKinematics:
    """Evaluate circle centers and their velocity/acceleration structure.

    Center j sits at offset o_j along the heading axis. Differentiating
    c_j = p + o_j e(heading) twice under the bicycle model and splitting the
    result into drift plus input-linear terms gives the arrays below.
    """
    x, y, th, v, de = (float(s) for s in state)
    k_r = params.rear_to_cg / params.wheelbase
    inv_wb = 1.0 / params.wheelbase
    tan_de = math.tan(de)
    beta = math.atan(k_r * tan_de)
    cb, sb = math.cos(beta), math.sin(beta)
    sec2 = 1.0 + tan_de * tan_de
    beta_d = k_r * sec2 / (1.0 + k_r * k_r * tan_de * tan_de)   # d beta / d steering

    e_th = np.array([math.cos(th), math.sin(th)])
    e_thp = np.array([-e_th[1], e_th[0]])
    thb = th + beta
    e_tb = np.array([math.cos(thb), math.sin(thb)])
    e_tbp = np.array([-e_tb[1], e_tb[0]])

    omega = v * inv_wb * tan_de * cb                 # yaw rate
    dw_dv = inv_wb * tan_de * cb                     # d omega / d v
    dw_dde = v * inv_wb * (sec2 * cb - tan_de * sb * beta_d)

    off = decomp.offsets[:, None]                    # (n, 1)
    centers = np.array([x, y]) + off * e_th
    cdot = v * e_tb + off * (omega * e_thp)
    drift = (v * omega) * e_tbp - off * (omega * omega) * e_th
    ga = e_tb + off * (dw_dv * e_thp)
    gs = (v * beta_d) * e_tbp + off * (dw_dde * e_thp)
    return VehicleKinematics(centers, cdot, drift, ga, gs)


@dataclass
class CbfEvaluation:
    """One barrier with its frozen-minimizer derivative structure."""

    h: float
    h_dot: float
    ddot_drift: float
    coeffs: dict = field(default_factory=dict)   # agent id -> (2,) input coefficient
    source: str = VEHICLE_PAIR
    agents: tuple = ()
    active: tuple = ()          # minimizer selector, for diagnostics

    def h_ddot(self, inputs: dict) -> float:
        """h_ddot under the given joint inputs (dict agent -> 2-vector)."""
        val = self.ddot_drift
        for a, coef in self.coeffs.items():
            u = inputs[a]
            val += coef[0] * float(u[0]) + coef[1] * float(u[1])
        return val


def evaluate_psi(evaluation: CbfEvaluation, inputs: dict, config: CbfConfig) -> float:
    """Discrete constraint value psi for one barrier under joint inputs.

    Raises ValueError when an involved vehicle's input is missing.
    """
    try:
        hdd = evaluation.h_ddot(inputs)
    except KeyError as e:
        raise ValueError(f"missing input for vehicle {e.args[0]}") from None
    return (config.dt * evaluation.h_dot
            + 0.5 * config.dt * config.dt * hdd
            + config.gamma * evaluation.h
            + config.remainder)


def _circles_nearest(centers: np.ndarray, boundary: Polyline):
    """Signed distance of each circle center to the boundary.

    Returns (dist (n,), segment (n,), t (n,)) with the same sign and
    tie-breaking conventions as geometry.pseudo_distance, vectorized over
    the covering circles.
    """
    pts = boundary.points
    a = pts[:-1]
    e = pts[1:] - a                                   # (S, 2)
    ee = np.einsum("ij,ij->i", e, e)
    ap = centers[:, None, :] - a[None, :, :]          # (n, S, 2)
    t = np.einsum("nsj,sj->ns", ap, e) / ee
    t = np.clip(t, 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * e[None, :, :]
    diff = centers[:, None, :] - closest
    d2 = np.einsum("nsj,nsj->ns", diff, diff)
    seg = np.argmin(d2, axis=1)                       # first minimum per circle
    rows = np.arange(centers.shape[0])
    dist = np.sqrt(d2[rows, seg])
    cross = (e[seg, 0] * (centers[:, 1] - a[seg, 1])
             - e[seg, 1] * (centers[:, 0] - a[seg, 0]))
    if boundary.orientation == "left":
        sign = np.where(cross >= 0.0, 1.0, -1.0)
    else:
        sign = np.where(cross <= 0.0, 1.0, -1.0)
    return sign * dist, seg, t[rows, seg]


def road_cbf(agent: int, state, boundary: Polyline, decomp: CircleDecomposition,
             params: VehicleParams, kin: VehicleKinematics | None = None,
             source: str = ROAD_LEFT) -> CbfEvaluation:
    """Barrier keeping one vehicle on the corridor side of one boundary:
    h = min over covering circles of (signed distance - radius).

    The derivative freezes the active circle and its active boundary
    feature. On a segment interior the frozen distance is linear (constant
    normal); at a vertex it is a point distance with the usual curvature
    term in the second derivative.
    """
    if kin is None:
        kin = vehicle_kinematics(state, decomp, params)
    dist, seg, t = _circles_nearest(kin.centers, boundary)
    j = int(np.argmin(dist))                          # equal radii: min distance
    h = float(dist[j]) - decomp.radius
    c = kin.centers[j]
    cdot = kin.cdot[j]

    pts = boundary.points
    s = int(seg[j])
    tj = float(t[j])
    if 0.0 < tj < 1.0:
        ev = pts[s + 1] - pts[s]
        n = np.array([-ev[1], ev[0]]) / math.hypot(ev[0], ev[1])
        if boundary.orientation != "left":
            n = -n
        grad = n
        quad = 0.0
        active = (j, s, "segment")
    else:
        wpt = pts[s] if tj <= 0.0 else pts[s + 1]
        rel = c - wpt
        r = math.hypot(rel[0], rel[1])
        if r < 1e-12:
            # center exactly on the vertex: fall back to the segment normal
            ev = pts[s + 1] - pts[s]
            n = np.array([-ev[1], ev[0]]) / math.hypot(ev[0], ev[1])
            grad = n if boundary.orientation == "left" else -n
            quad = 0.0
        else:
            sigma = 1.0 if dist[j] >= 0.0 else -1.0
            m = rel / r
            grad = sigma * m
            mdot = float(m[0] * cdot[0] + m[1] * cdot[1])
            quad = sigma * (float(cdot[0] ** 2 + cdot[1] ** 2) - mdot * mdot) / r
        active = (j, s, "vertex")

    h_dot = float(grad[0] * cdot[0] + grad[1] * cdot[1])
    drift = quad + float(grad[0] * kin.drift[j][0] + grad[1] * kin.drift[j][1])
    coeffs = {agent: np.array([float(grad @ kin.ga[j]), float(grad @ kin.gs[j])])}
    return CbfEvaluation(h, h_dot, drift, coeffs, source, (agent,), active)


def vehicle_pair_cbf(agent_i: int, state_i, agent_j: int, state_j,
                     decomp: CircleDecomposition, params: VehicleParams,
                     kin_i: VehicleKinematics | None = None,
                     kin_j: VehicleKinematics | None = None) -> CbfEvaluation:
    """Separation barrier between two vehicles:
    h = min over circle pairs of (center distance - radius sum).

    Symmetric in the two vehicles; ties in the pair minimization break
    lexicographically (own circle index first).
    """
    if kin_i is None:
        kin_i = vehicle_kinematics(state_i, decomp, params)
    if kin_j is None:
        kin_j = vehicle_kinematics(state_j, decomp, params)
    diff = kin_i.centers[:, None, :] - kin_j.centers[None, :, :]
    d2 = np.einsum("abj,abj->ab", diff, diff)
    flat = int(np.argmin(d2))                         # row-major: lexicographic
    a, b = divmod(flat, d2.shape[1])
    dvec = diff[a, b]
    dist = math.sqrt(float(d2[a, b]))
    rsum = 2.0 * decomp.radius
    h = dist - rsum
    if dist < 1e-12:
        n = np.array([1.0, 0.0])                      # degenerate coincident centers
        dist = 1e-12
    else:
        n = dvec / dist

    ddot = kin_i.cdot[a] - kin_j.cdot[b]
    h_dot = float(n @ ddot)
    quad = (float(ddot @ ddot) - h_dot * h_dot) / dist
    drift = quad + float(n @ (kin_i.drift[a] - kin_j.drift[b]))
    coeffs = {
        agent_i: np.array([float(n @ kin_i.ga[a]), float(n @ kin_i.gs[a])]),
        agent_j: np.array([-float(n @ kin_j.ga[b]), -float(n @ kin_j.gs[b])]),
    }
    return CbfEvaluation(h, h_dot, drift, coeffs, VEHICLE_PAIR,
                         (agent_i, agent_j), (a, b))


@dataclass
class ConstraintValue:
    """psi for one barrier, tagged with its source."""

    psi: float
    source: str                 # road_L, road_R or veh
    agents: tuple
    evaluation: CbfEvaluation


def all_constraints(states, corridors, decomp: CircleDecomposition,
                    params: VehicleParams, inputs, config: CbfConfig):
    """Evaluate every constraint of a scene under joint inputs.

    states: (N, 5) array of vehicle states; corridors: per-vehicle
    (left boundary, right boundary) pair; inputs: (N, 2) array. Returns a
    list over agents, each a list of ConstraintValue ordered
    [road_L, road_R, pair with agent 0, 1, ... skipping self]. Pair
    entries are shared objects between the two agents (psi is symmetric).
    """
    n = len(states)
    input_map = {i: inputs[i] for i in range(n)}
    kins = [vehicle_kinematics(states[i], decomp, params) for i in range(n)]

    per_agent: list[list[ConstraintValue]] = [[] for _ in range(n)]
    for i in range(n):
        left, right = corridors[i]
        for boundary, src in ((left, ROAD_LEFT), (right, ROAD_RIGHT)):
            ev = road_cbf(i, states[i], boundary, decomp, params,
                          kin=kins[i], source=src)
            psi = evaluate_psi(ev, input_map, config)
            per_agent[i].append(ConstraintValue(psi, src, (i,), ev))

    pair_cv: dict[tuple, ConstraintValue] = {}
    for i in range(n):
        for j in range(i + 1, n):
            ev = vehicle_pair_cbf(i, states[i], j, states[j], decomp, params,
                                  kin_i=kins[i], kin_j=kins[j])
            psi = evaluate_psi(ev, input_map, config)
            pair_cv[(i, j)] = ConstraintValue(psi, VEHICLE_PAIR, (i, j), ev)
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            key = (i, j) if i < j else (j, i)
            per_agent[i].append(pair_cv[key])
    return per_agent
