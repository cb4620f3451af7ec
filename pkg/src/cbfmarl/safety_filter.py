"""Posterior safety filter used as a measurement instrument.

For one agent, every barrier constraint psi(u) >= 0 is affine in that
agent's input once the other vehicles' inputs are frozen at their policy
actions, giving half-planes a . u >= b over the actuation box. The filter
solves the small projection QP

    min ||u - u_rl||^2   s.t.  A u >= b,  low <= u <= high

exactly by enumerating active sets (interior, one active hyperplane, or a
vertex of two). The filtered action is *not* executed anywhere in this
package; the correction magnitude is recorded to quantify how often and how
strongly a trained policy violates the one-step barrier condition.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cbf import CbfConfig, ConstraintValue
from .dynamics import VehicleParams


@dataclass
class FilterResult:
    """Outcome of filtering one agent-step."""

    u_rl: np.ndarray            # policy action
    u_filtered: np.ndarray      # nearest feasible action (or diagnostic point)
    correction: float           # ||u_f - u_rl|| with axes scaled by half-range
    feasible: bool              # False when the QP has no feasible point
    active: tuple               # indices of tight rows at the solution


def assemble_agent_qp(agent: int, constraints: list, inputs: dict,
                      config: CbfConfig) -> tuple[np.ndarray, np.ndarray]:
    """Half-plane rows (A, b) with A u >= b for one agent's constraints.

    ``inputs`` maps every other involved vehicle to its frozen action; the
    agent's own entry is ignored. Row order follows the constraint list.
    """
    rows = []
    rhs = []
    for cv in constraints:
        ev = cv.evaluation
        if agent not in ev.coeffs:
            raise ValueError(f"constraint does not involve agent {agent}")
        a_vec = 0.5 * config.dt * config.dt * ev.coeffs[agent]
        const = (config.dt * ev.h_dot + config.gamma * ev.h + config.remainder
                 + 0.5 * config.dt * config.dt * ev.ddot_drift)
        for other, coef in ev.coeffs.items():
            if other == agent:
                continue
            u = inputs[other]
            const += 0.5 * config.dt * config.dt * (
                coef[0] * float(u[0]) + coef[1] * float(u[1]))
        rows.append(a_vec)
        rhs.append(-const)
    return np.asarray(rows, float).reshape(-1, 2), np.asarray(rhs, float)


def _min_max_violation(A: np.ndarray, b: np.ndarray, low, high) -> np.ndarray:
    """Point of the box minimizing the largest constraint violation.

    Solves min t s.t. A u + t >= b, low <= u <= high as a tiny LP by
    enumerating triples of active constraints. Only used on infeasible QPs.
    """
    m = A.shape[0]
    # rows: [a0, a1, t-coef] . [u0, u1, t] >= rhs
    G = np.zeros((m + 4, 3))
    g = np.zeros(m + 4)
    G[:m, :2] = A
    G[:m, 2] = 1.0
    g[:m] = b
    G[m] = [1.0, 0.0, 0.0]; g[m] = low[0]
    G[m + 1] = [-1.0, 0.0, 0.0]; g[m + 1] = -high[0]
    G[m + 2] = [0.0, 1.0, 0.0]; g[m + 2] = low[1]
    G[m + 3] = [0.0, -1.0, 0.0]; g[m + 3] = -high[1]

    best_t = math.inf
    best_u = 0.5 * (np.asarray(low) + np.asarray(high))
    for trio in itertools.combinations(range(m + 4), 3):
        M = G[list(trio)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        sol = np.linalg.solve(M, g[list(trio)])
        if np.any(G @ sol < g - 1e-9):
            continue
        if sol[2] < best_t - 1e-12:
            best_t = sol[2]
            best_u = sol[:2].copy()
    return best_u


def solve_box_qp(u_rl, A: np.ndarray, b: np.ndarray, low, high,
                 tol: float = 1e-9) -> tuple[np.ndarray, bool, tuple]:
    """Exact projection of u_rl onto {A u >= b} intersected with the box.

    Enumerates the candidate active sets of the 2-d QP: the unconstrained
    point, the projection onto each single constraint line, and every
    vertex of two constraint lines; returns the feasible candidate closest
    to u_rl. Returns (u, feasible, active_rows).
    """
    u_rl = np.asarray(u_rl, float)
    low = np.asarray(low, float)
    high = np.asarray(high, float)
    # box faces as additional half-planes
    G = np.vstack([A, [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]])
    g = np.concatenate([b, [low[0], -high[0], low[1], -high[1]]])
    nrow = G.shape[0]

    def feasible_point(u):
        return bool(np.all(G @ u >= g - tol))

    if feasible_point(u_rl):
        return u_rl.copy(), True, ()

    best = None
    best_d2 = math.inf
    best_active: tuple = ()
    # single active row: orthogonal projection onto its line
    for k in range(nrow):
        nk = G[k]
        n2 = float(nk @ nk)
        if n2 < 1e-16:
            continue
        u = u_rl + (g[k] - float(nk @ u_rl)) / n2 * nk
        if feasible_point(u):
            d2 = float((u - u_rl) @ (u - u_rl))
            if d2 < best_d2 - 1e-15:
                best, best_d2, best_active = u, d2, (k,)
    # vertices of two rows
    for k in range(nrow):
        for l in range(k + 1, nrow):
            M = np.array([G[k], G[l]])
            det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
            if abs(det) < 1e-14:
                continue
            u = np.linalg.solve(M, np.array([g[k], g[l]]))
            if feasible_point(u):
                d2 = float((u - u_rl) @ (u - u_rl))
                if d2 < best_d2 - 1e-15:
                    best, best_d2, best_active = u, d2, (k, l)
    if best is not None:
        return best, True, best_active

    u = _min_max_violation(A, b, low, high)
    return u, False, ()


def apply_filter(agent: int, constraints: list, inputs: dict,
                 params: VehicleParams, config: CbfConfig,
                 epsilon: float = 1e-6) -> FilterResult:
    """Assemble and solve one agent's QP; report the normalized correction.

    Axes are normalized by the half-range of each input so accel and
    steering corrections are commensurable.
    """
    A, b = assemble_agent_qp(agent, constraints, inputs, config)
    u_rl = np.asarray(inputs[agent], float)
    low, high = params.input_low, params.input_high
    u_f, feas, active = solve_box_qp(u_rl, A, b, low, high)
    half = 0.5 * (high - low)
    diff = (u_f - u_rl) / half
    corr = float(math.hypot(diff[0], diff[1]))
    return FilterResult(u_rl, u_f, corr, feas, active)


def activation_degree(corrections, epsilon: float = 1e-6) -> float:
    """Fraction of agent-steps whose normalized correction exceeds epsilon."""
    c = np.asarray(corrections, float)
    if c.size == 0:
        return 0.0
    return float(np.mean(c > epsilon))
