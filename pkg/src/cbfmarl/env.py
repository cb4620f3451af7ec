"""Multi-vehicle intersection environment.

Vehicles spawn on entry lanes with a random maneuver, drive under per-agent
[accel, steer_rate] actions, and are respawned when they collide (exact
rectangle test) or reach their exit region. Rewards are produced per agent
per step by the configured method (barrier / clearance / time-to-collision
shaping plus path progress).

Step order: safety terms on the pre-transition state with the joint
actions -> RK4 integration -> collision detection -> exit detection ->
respawns -> observations. Progress rewards use the realized displacement of
this step, taken before any respawn teleport.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cbf as cbf_mod
from . import rewards as rewards_mod
from .cbf import CbfConfig
from .dynamics import VehicleParams, step as dyn_step, wrap_angle
from .geometry import (IntersectionMap, circle_centers, decompose_rectangle,
                       rect_corners, segments_intersect)
from .rewards import RewardBreakdown, RewardConfig

EXIT = "exit"
COLLISION_VEHICLE = "collision_vehicle"
COLLISION_ROAD = "collision_road"


@dataclass(frozen=True)
class SimConfig:
    """Simulation loop parameters."""

    n_agents: int = 4
    dt: float = 0.1
    spawn_stagger: float = 1.5       # slot spacing in body lengths
    spawn_retries: int = 100


@dataclass(frozen=True)
class EpisodeEvent:
    """Something that respawned a vehicle: an exit or a collision."""

    step: int
    kind: str                        # exit | collision_vehicle | collision_road
    agents: tuple                    # one id, or two for vehicle collisions


def rect_separation(corners_a: np.ndarray, corners_b: np.ndarray) -> float:
    """Separating-axis margin between two convex quads (rectangles).

    Positive: separated by that much along the best axis. Negative: the
    projections overlap on every axis (for rectangles this means the bodies
    intersect); the magnitude is the smallest projection overlap.
    """
    best = -math.inf
    for corners in (corners_a, corners_b):
        for k in range(2):           # two unique edge normals per rectangle
            e = corners[k + 1] - corners[k]
            ax, ay = -e[1], e[0]
            inv = 1.0 / math.hypot(ax, ay)
            ax *= inv
            ay *= inv
            pa = corners_a @ (ax, ay)
            pb = corners_b @ (ax, ay)
            gap = max(pb.min() - pa.max(), pa.min() - pb.max())
            if gap > best:
                best = gap
    return best


def rects_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Exact rectangle intersection test (touching counts as overlap)."""
    return rect_separation(corners_a, corners_b) <= 0.0


class IntersectionEnv:
    """Simulation world; holds map, vehicles and reward configuration."""

    def __init__(self, imap: IntersectionMap, params: VehicleParams = VehicleParams(),
                 sim: SimConfig = SimConfig(), reward: RewardConfig = RewardConfig(),
                 cbf_config: CbfConfig | None = None):
        if sim.n_agents < 1:
            raise ValueError("need at least one vehicle")
        self.map = imap
        self.params = params
        self.sim = sim
        self.reward_config = reward
        self.cbf_config = cbf_config or CbfConfig(dt=sim.dt)
        if abs(self.cbf_config.dt - sim.dt) > 1e-12:
            raise ValueError("cbf dt must match the simulation dt")
        self.decomp = decompose_rectangle(params.body_length, params.body_width,
                                          params.n_circles)
        self.n_agents = sim.n_agents
        self.n_reference = reward.n_reference
        self.ref_spacing = params.v_max * sim.dt * reward.lookahead_steps
        # spawn slots: centers of stagger-sized bins along the entry stretch
        stagger = sim.spawn_stagger * params.body_length
        n_slots = int(imap.config.entry_region_length / stagger)
        if n_slots < 1:
            raise ValueError("entry region too short for one spawn slot")
        self._slot_s = (np.arange(n_slots) + 0.5) * stagger
        self._pos_scale = imap.config.half_extent

        self.states = np.zeros((self.n_agents, 5))
        self.path_idx = np.zeros(self.n_agents, dtype=int)
        self.step_index = 0
        self.rng: np.random.Generator | None = None
        self._proj_s = np.zeros(self.n_agents)
        self._proj_seg = np.zeros(self.n_agents, dtype=int)
        self._prev_speed = np.zeros(self.n_agents)
        self._prev_accel = np.zeros(self.n_agents)
        self._accel = np.zeros(self.n_agents)
        self._jerk = np.zeros(self.n_agents)

    # ------------------------------------------------------------------
    # observation layout
    # ------------------------------------------------------------------

    @property
    def obs_dim(self) -> int:
        return 3 + 2 * self.n_reference + 4 * (self.n_agents - 1)

    def corridor_of(self, agent: int):
        return self.map.corridors[self.path_idx[agent]]

    def path_of(self, agent: int):
        return self.map.paths[self.path_idx[agent]]

    # ------------------------------------------------------------------
    # reset / spawn
    # ------------------------------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        """Fresh episode: seed the generator and spawn every vehicle.

        Raises RuntimeError when no collision-free slot is found within the
        retry budget.
        """
        self.rng = np.random.default_rng(seed)
        self.step_index = 0
        self._prev_accel[:] = 0.0
        self._accel[:] = 0.0
        self._jerk[:] = 0.0
        placed: list[np.ndarray] = []
        for i in range(self.n_agents):
            self._spawn(i, placed)
            placed.append(self._corners(i))
        return self.observe_all()

    def _spawn(self, agent: int, placed_rects) -> None:
        """Draw (entry, maneuver, slot) until the placement is free."""
        p = self.params
        for _ in range(self.sim.spawn_retries):
            entry = int(self.rng.integers(4))
            man = int(self.rng.integers(3))
            slot = int(self.rng.integers(len(self._slot_s)))
            path_idx = entry * 3 + man
            path = self.map.paths[path_idx]
            s = float(self._slot_s[slot])
            pos, ang, seg = path.pose_at(s)
            corners = rect_corners(pos[0], pos[1], ang, p.body_length, p.body_width)
            if any(rects_overlap(corners, r) for r in placed_rects):
                continue
            speed = float(self.rng.uniform(0.0, p.v_max))
            self.states[agent] = [pos[0], pos[1], ang, speed, 0.0]
            self.path_idx[agent] = path_idx
            self._proj_s[agent] = s
            self._proj_seg[agent] = seg
            self._prev_speed[agent] = speed
            self._prev_accel[agent] = 0.0
            return
        raise RuntimeError("no free spawn slot after retry budget")

    def _corners(self, agent: int) -> np.ndarray:
        s = self.states[agent]
        return rect_corners(s[0], s[1], s[2], self.params.body_length,
                            self.params.body_width)

    # ------------------------------------------------------------------
    # stepping
    # ------------------------------------------------------------------

    def step(self, actions):
        """Advance one control interval.

        Returns (observations (N, obs_dim), rewards list[RewardBreakdown],
        events list[EpisodeEvent], info dict). info carries 'accel', 'jerk'
        (per-agent comfort signals of this step) and 'resets' (bool mask of
        respawned agents).
        """
        if self.rng is None:
            raise RuntimeError("reset() must be called before step()")
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n_agents, 2):
            raise ValueError(f"actions must have shape ({self.n_agents}, 2)")
        n = self.n_agents
        method = self.reward_config.method
        corridors = [self.corridor_of(i) for i in range(n)]
        paths = [self.path_of(i) for i in range(n)]

        # safety terms on the pre-transition scene
        constraints = None
        road_cl = pair_cl = None
        if method == "cbf":
            constraints = cbf_mod.all_constraints(
                self.states, corridors, self.decomp, self.params,
                actions, self.cbf_config)
        else:
            road_cl, pair_cl = rewards_mod.scene_distances(
                self.states, corridors, self.decomp)
        p_prev = self.states[:, :2].copy()
        s_prev = self._proj_s.copy()
        pre_states = self.states.copy()

        # integrate
        for i in range(n):
            self.states[i] = dyn_step(self.states[i], actions[i], self.params,
                                      self.sim.dt)

        # rewards: pre-transition safety + realized progress
        rewards: list[RewardBreakdown] = []
        for i in range(n):
            rb = rewards_mod.step_reward(
                i, pre_states, corridors, paths[i], p_prev[i],
                self.states[i, :2], actions, self.reward_config,
                self.cbf_config, self.decomp, self.params,
                constraints=None if constraints is None else constraints[i],
                road_clearances=None if road_cl is None else road_cl[i],
                pair_clearances=None if pair_cl is None else pair_cl[i])
            rewards.append(rb)

        # comfort signals from realized speed changes
        dt = self.sim.dt
        speeds = self.states[:, 3]
        accel = (speeds - self._prev_speed) / dt
        jerk = (accel - self._prev_accel) / dt

        # post-transition projections (reused for exits and observations)
        for i in range(n):
            s, seg, _ = paths[i].project(self.states[i, :2])
            self._proj_s[i] = s
            self._proj_seg[i] = seg

        events = self._detect_events(corridors, paths)

        # respawn every vehicle involved in an event
        reset_mask = np.zeros(n, dtype=bool)
        for ev in events:
            for a in ev.agents:
                reset_mask[a] = True
        if reset_mask.any():
            rects = [self._corners(i) for i in range(n) if not reset_mask[i]]
            for i in range(n):
                if reset_mask[i]:
                    self._spawn(i, rects)
                    rects.append(self._corners(i))
                    accel[i] = 0.0
                    jerk[i] = 0.0

        self._prev_speed = self.states[:, 3].copy()
        self._prev_accel = accel.copy()
        self._accel = accel
        self._jerk = jerk
        self.step_index += 1

        info = {"accel": accel.copy(), "jerk": jerk.copy(),
                "resets": reset_mask, "progress_prev": s_prev}
        return self.observe_all(), rewards, events, info

    def _detect_events(self, corridors, paths) -> list:
        """Exact collision tests (pruned by circle clearances) then exits.

        A vehicle joins at most one collision event per step; collisions
        preempt exits.
        """
        n = self.n_agents
        centers = [circle_centers(self.states[i], self.decomp) for i in range(n)]
        corners = [self._corners(i) for i in range(n)]
        rsum = 2.0 * self.decomp.radius
        events: list[EpisodeEvent] = []
        marked = np.zeros(n, dtype=bool)

        for i in range(n):
            for j in range(i + 1, n):
                if marked[i] and marked[j]:
                    continue
                diff = centers[i][:, None, :] - centers[j][None, :, :]
                d2 = np.einsum("abk,abk->ab", diff, diff)
                if d2.min() > rsum * rsum:
                    continue                      # circles disjoint: no contact
                if rects_overlap(corners[i], corners[j]):
                    events.append(EpisodeEvent(self.step_index,
                                               COLLISION_VEHICLE, (i, j)))
                    marked[i] = marked[j] = True

        for i in range(n):
            if marked[i]:
                continue
            for boundary in corridors[i]:
                d, _, _ = cbf_mod._circles_nearest(centers[i], boundary)
                if d.min() - self.decomp.radius > 0.0:
                    continue                      # inside by circle covering
                if self._rect_crosses(corners[i], boundary.points):
                    events.append(EpisodeEvent(self.step_index,
                                               COLLISION_ROAD, (i,)))
                    marked[i] = True
                    break

        for i in range(n):
            if marked[i]:
                continue
            s_norm = self._proj_s[i] / paths[i].length
            if s_norm >= 1.0 - 1e-9:
                region = self.map.exit_regions[paths[i].exit]
                if region.contains(self.states[i, :2]):
                    events.append(EpisodeEvent(self.step_index, EXIT, (i,)))
        return events

    @staticmethod
    def _rect_crosses(corners: np.ndarray, boundary_pts: np.ndarray) -> bool:
        for k in range(4):
            p1, p2 = corners[k], corners[(k + 1) % 4]
            for s in range(boundary_pts.shape[0] - 1):
                if segments_intersect(p1, p2, boundary_pts[s], boundary_pts[s + 1]):
                    return True
        return False

    # ------------------------------------------------------------------
    # observations and signals
    # ------------------------------------------------------------------

    def observe_all(self) -> np.ndarray:
        return np.stack([self.observe(i) for i in range(self.n_agents)])

    def observe(self, agent: int) -> np.ndarray:
        """Ego block (speed, steering, heading error), look-ahead reference
        points in the ego frame, then one block per other vehicle (relative
        position in ego frame, relative heading, speed) sorted by distance
        (ties by id). Values are scaled to roughly [-1, 1]."""
        p = self.params
        s = self.states[agent]
        path = self.path_of(agent)
        x, y, th, v, de = s
        cs, sn = math.cos(th), math.sin(th)
        tangent = path.tangent_angle(self._proj_seg[agent])
        herr = wrap_angle(th - tangent)

        out = np.empty(self.obs_dim)
        out[0] = v / p.v_max
        out[1] = de / p.delta_max
        out[2] = herr / math.pi
        k = 3
        s0 = self._proj_s[agent]
        for m in range(1, self.n_reference + 1):
            q = path.point_at(s0 + m * self.ref_spacing)
            dx, dy = q[0] - x, q[1] - y
            out[k] = (cs * dx + sn * dy) / self._pos_scale
            out[k + 1] = (-sn * dx + cs * dy) / self._pos_scale
            k += 2

        others = [j for j in range(self.n_agents) if j != agent]
        dist = [float(np.hypot(self.states[j, 0] - x, self.states[j, 1] - y))
                for j in others]
        order = sorted(range(len(others)), key=lambda t: (dist[t], others[t]))
        for t in order:
            j = others[t]
            so = self.states[j]
            dx, dy = so[0] - x, so[1] - y
            out[k] = (cs * dx + sn * dy) / self._pos_scale
            out[k + 1] = (-sn * dx + cs * dy) / self._pos_scale
            out[k + 2] = wrap_angle(so[2] - th) / math.pi
            out[k + 3] = so[3] / p.v_max
            k += 4
        return out

    def comfort_signals(self, agent: int) -> tuple[float, float]:
        """(accel, jerk) of the last completed step, from realized speed
        changes; zeroed when the vehicle respawned that step."""
        return float(self._accel[agent]), float(self._jerk[agent])
