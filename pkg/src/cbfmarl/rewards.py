"""Per-step, per-agent rewards: barrier-informed safety shaping, two
heuristic safety baselines (clearance and time-to-collision thresholds) and
a shared path-progress term.

All safety terms live in [-1, 0] per source and are averaged as
(vehicle term + left road term + right road term) / 3, so the three reward
methods are interchangeable in the training loop and identical (= progress
only) when every agent is far from its corridor boundaries and from the
others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cbf as cbf_mod
from .cbf import CbfConfig, ConstraintValue, ROAD_LEFT, ROAD_RIGHT, VEHICLE_PAIR
from .dynamics import VehicleParams
from .geometry import (CircleDecomposition, ReferencePath, circle_centers,
                       sample_reference_points)

METHODS = ("cbf", "distance", "ttc")


@dataclass(frozen=True)
class RewardConfig:
    """Reward method and thresholds."""

    method: str = "cbf"
    psi_threshold: float = 0.1           # barrier penalty ramp width
    road_distance_threshold: float = 0.005   # clearance ramp, road terms [m]
    vehicle_distance_threshold: float = 0.1  # clearance ramp, vehicle term [m]
    ttc_threshold: float = 4.0           # time-to-collision ramp [s]
    progress_weight: float = 0.1
    n_reference: int = 3                 # look-ahead points for progress
    reference_weights: tuple = (3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0)
    lookahead_steps: int = 5             # ref spacing = v_max * dt * this

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown reward method {self.method!r}")
        if len(self.reference_weights) != self.n_reference:
            raise ValueError("reference_weights length must match n_reference")


@dataclass
class RewardBreakdown:
    """One agent-step reward with its components."""

    agent: int
    safety: float
    progress: float
    total: float
    per_source: dict = field(default_factory=dict)


def clip_rho(psi: float, psi_threshold: float) -> float:
    """Clipped linear penalty of a constraint value: 0 for psi >= 0, -1 for
    psi <= -threshold, linear in between."""
    if psi_threshold <= 0.0:
        raise ValueError("psi threshold must be positive")
    return -min(max(-psi / psi_threshold, 0.0), 1.0)


def _ramp(z: float) -> float:
    """Baseline penalty ramp: 0 for z <= 0, -1 for z >= 1, linear between."""
    return -min(max(z, 0.0), 1.0)


def cbf_reward(constraints: list, psi_threshold: float) -> tuple[float, dict]:
    """Barrier-informed safety reward of one agent from its constraint list
    (road_L, road_R and one entry per other vehicle). The vehicle term is
    the mean of the pair penalties (0 when there are no other vehicles).

    Returns (reward, per-source penalty map).
    """
    per_source: dict[str, float] = {}
    pair_vals = []
    road = {ROAD_LEFT: 0.0, ROAD_RIGHT: 0.0}
    for cv in constraints:
        rho = clip_rho(cv.psi, psi_threshold)
        if cv.source == VEHICLE_PAIR:
            per_source[f"veh_{min(cv.agents)}_{max(cv.agents)}"] = rho
            pair_vals.append(rho)
        else:
            road[cv.source] = rho
            per_source[cv.source] = rho
    veh = float(np.mean(pair_vals)) if pair_vals else 0.0
    reward = (veh + road[ROAD_LEFT] + road[ROAD_RIGHT]) / 3.0
    return reward, per_source


def progress_reward(path: ReferencePath, p_prev, p_next, config: RewardConfig,
                    v_max: float, dt: float) -> float:
    """Weighted projection of the step displacement onto the directions
    toward look-ahead reference points, normalized so that driving along a
    straight path at v_max yields exactly ``progress_weight``.

    Reference points closer than 1e-9 to the previous position (path end)
    contribute zero.
    """
    spacing = v_max * dt * config.lookahead_steps
    refs = sample_reference_points(path, p_prev, config.n_reference, spacing)
    p_prev = np.asarray(p_prev, float)
    delta = np.asarray(p_next, float) - p_prev
    acc = 0.0
    for w, q in zip(config.reference_weights, refs):
        d = q - p_prev
        norm = math.hypot(d[0], d[1])
        if norm < 1e-9:
            continue
        acc += w * float(delta @ d) / norm
    return config.progress_weight * acc / (v_max * dt)


def scene_distances(states, corridors, decomp: CircleDecomposition):
    """Clearances used by the baseline rewards: per-agent (left, right)
    road clearances and the symmetric matrix of pairwise vehicle
    clearances (min circle-pair surface distance, negative when circles
    overlap; diagonal is +inf)."""
    n = len(states)
    centers = [circle_centers(states[i], decomp) for i in range(n)]
    road = np.zeros((n, 2))
    for i in range(n):
        for k, boundary in enumerate(corridors[i]):
            d, _, _ = cbf_mod._circles_nearest(centers[i], boundary)
            road[i, k] = d.min() - decomp.radius
    pair = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            diff = centers[i][:, None, :] - centers[j][None, :, :]
            d = np.sqrt(np.einsum("abk,abk->ab", diff, diff)).min()
            pair[i, j] = pair[j, i] = d - 2.0 * decomp.radius
    return road, pair


def distance_baseline_reward(road_clearances, vehicle_clearances,
                             config: RewardConfig) -> tuple[float, dict]:
    """Clearance-threshold baseline: linear penalty ramps on the road
    clearances (threshold ``road_distance_threshold``) and on each
    vehicle clearance (threshold ``vehicle_distance_threshold``), averaged
    /3 like the barrier reward. Distances must be non-negative."""
    dl, dr = float(road_clearances[0]), float(road_clearances[1])
    if dl < 0.0 or dr < 0.0 or any(d < 0.0 for d in vehicle_clearances):
        raise ValueError("clearances must be non-negative")
    dth = config.road_distance_threshold
    vth = config.vehicle_distance_threshold
    per = {ROAD_LEFT: _ramp((dth - dl) / dth), ROAD_RIGHT: _ramp((dth - dr) / dth)}
    vals = [_ramp((vth - float(d)) / vth) for d in vehicle_clearances]
    veh = float(np.mean(vals)) if vals else 0.0
    reward = (veh + per[ROAD_LEFT] + per[ROAD_RIGHT]) / 3.0
    for k, v in enumerate(vals):
        per[f"veh_{k}"] = v
    return reward, per


def ttc(state_i, state_j, decomp: CircleDecomposition,
        params: VehicleParams) -> float:
    """Time to first contact of any covering circle pair when both vehicles
    keep their current planar velocity v * (cos(heading+beta),
    sin(heading+beta)). Returns 0 if circles already overlap, +inf if no
    future contact occurs; grazing (tangent) contact counts."""
    ci = circle_centers(state_i, decomp)
    cj = circle_centers(state_j, decomp)

    def planar_vel(s):
        beta = math.atan(math.tan(float(s[4])) * params.rear_to_cg / params.wheelbase)
        ang = float(s[2]) + beta
        return float(s[3]) * np.array([math.cos(ang), math.sin(ang)])

    dv = planar_vel(state_i) - planar_vel(state_j)
    rsum = 2.0 * decomp.radius
    a = float(dv @ dv)
    best = math.inf
    for p in ci:
        for q in cj:
            dc = p - q
            c = float(dc @ dc) - rsum * rsum
            if c <= 0.0:
                return 0.0
            if a < 1e-16:
                continue
            b = 2.0 * float(dc @ dv)
            disc = b * b - 4.0 * a * c
            if disc < 0.0:
                continue
            t = (-b - math.sqrt(disc)) / (2.0 * a)
            if 0.0 <= t < best:
                best = t
    return best


def ttc_baseline_reward(road_clearances, ttcs, config: RewardConfig) -> tuple[float, dict]:
    """Time-to-collision baseline: road terms as in the clearance baseline,
    vehicle term ramps on (threshold - ttc) / threshold. Infinite ttc gives
    zero penalty."""
    dl, dr = float(road_clearances[0]), float(road_clearances[1])
    if dl < 0.0 or dr < 0.0:
        raise ValueError("clearances must be non-negative")
    dth = config.road_distance_threshold
    tth = config.ttc_threshold
    per = {ROAD_LEFT: _ramp((dth - dl) / dth), ROAD_RIGHT: _ramp((dth - dr) / dth)}
    vals = []
    for k, t in enumerate(ttcs):
        v = 0.0 if math.isinf(t) else _ramp((tth - float(t)) / tth)
        vals.append(v)
        per[f"veh_{k}"] = v
    veh = float(np.mean(vals)) if vals else 0.0
    reward = (veh + per[ROAD_LEFT] + per[ROAD_RIGHT]) / 3.0
    return reward, per


def step_reward(agent: int, states, corridors, path: ReferencePath,
                p_prev, p_next, inputs, reward_config: RewardConfig,
                cbf_config: CbfConfig, decomp: CircleDecomposition,
                params: VehicleParams, constraints: list | None = None,
                road_clearances=None, pair_clearances=None) -> RewardBreakdown:
    """Dispatch one agent's reward for one step.

    Safety terms are evaluated on the pre-transition states (with the joint
    inputs for the barrier method); progress uses the realized displacement
    p_prev -> p_next. ``constraints`` /  ``*_clearances`` allow reusing
    scene-level computations across agents; they are recomputed when absent.
    """
    n = len(states)
    method = reward_config.method
    if method == "cbf":
        if constraints is None:
            constraints = cbf_mod.all_constraints(
                states, corridors, decomp, params,
                np.asarray(inputs, float), cbf_config)[agent]
        safety, per = cbf_reward(constraints, reward_config.psi_threshold)
    else:
        if road_clearances is None or pair_clearances is None:
            road, pair = scene_distances(states, corridors, decomp)
            road_clearances = road[agent]
            pair_clearances = pair[agent]
        road_cl = np.maximum(np.asarray(road_clearances, float), 0.0)
        others = [j for j in range(n) if j != agent]
        if method == "distance":
            veh_cl = [max(float(pair_clearances[j]), 0.0) for j in others]
            safety, per = distance_baseline_reward(road_cl, veh_cl, reward_config)
        else:
            ttcs = [ttc(states[agent], states[j], decomp, params) for j in others]
            safety, per = ttc_baseline_reward(road_cl, ttcs, reward_config)
        # rename enumeration keys to the other vehicles' actual ids
        per = {(f"veh_{others[int(k.split('_')[1])]}"
                if k.startswith("veh_") else k): v for k, v in per.items()}

    prog = progress_reward(path, p_prev, p_next, reward_config,
                           params.v_max, cbf_config.dt)
    return RewardBreakdown(agent, float(safety), float(prog),
                           float(safety) + float(prog), per)
