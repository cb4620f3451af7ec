"""Intersection environment: spawning, stepping, events, observations."""

import math

import numpy as np
import pytest

from cbfmarl.dynamics import step as dyn_step, wrap_angle
from cbfmarl.env import (COLLISION_ROAD, COLLISION_VEHICLE, EXIT,
                         IntersectionEnv, SimConfig, rect_separation,
                         rects_overlap)
from cbfmarl.geometry import rect_corners
from cbfmarl.rewards import METHODS, RewardConfig

from conftest import assert_close


def test_obs_dim(make_env):
    env = make_env()
    assert env.obs_dim == 3 + 2 * 3 + 4 * 3 == 21
    env2 = make_env(n_agents=2)
    assert env2.obs_dim == 13


def test_reset_determinism(make_env):
    env = make_env()
    a = env.reset(7)
    states_a = env.states.copy()
    b = env.reset(7)
    assert np.array_equal(a, b)
    assert np.array_equal(states_a, env.states)
    c = env.reset(8)
    assert not np.array_equal(a, c)


def test_spawn_validity(make_env):
    env = make_env()
    for seed in range(40):
        env.reset(seed)
        corners = [env._corners(i) for i in range(env.n_agents)]
        for i in range(env.n_agents):
            for j in range(i + 1, env.n_agents):
                assert not rects_overlap(corners[i], corners[j])
            path = env.path_of(i)
            st = env.states[i]
            assert env.map.entry_regions[path.entry].contains(st[:2])
            assert 0.0 <= st[3] <= env.params.v_max
            assert st[4] == 0.0
            # heading matches the path tangent at the spawn point
            s, seg, _ = path.project(st[:2])
            assert_close(wrap_angle(st[2] - path.tangent_angle(seg)), 0.0, 1e-9)
            # spawn arclength sits at one of the staggered slots
            slots = env._slot_s
            assert np.abs(slots - s).min() < 1e-9


def test_step_matches_single_vehicle_dynamics(make_env):
    env = make_env()
    env.reset(3)
    pre = env.states.copy()
    actions = np.array([[1.0, 0.2], [-0.5, -0.1], [0.3, 0.0], [2.0, 0.4]])
    env.step(actions)
    for i in range(4):
        want = dyn_step(pre[i], actions[i], env.params, env.sim.dt)
        # respawned vehicles moved elsewhere; others must match exactly
        if not np.array_equal(env.states[i], want):
            assert env.map.entry_regions[env.path_of(i).entry].contains(
                env.states[i, :2])


def test_step_shape_checks(make_env):
    env = make_env()
    env.reset(0)
    with pytest.raises(ValueError):
        env.step(np.zeros((3, 2)))
    env2 = make_env()
    with pytest.raises(RuntimeError):
        env2.step(np.zeros((4, 2)))


def test_reward_totals_and_methods(make_env):
    for method in METHODS:
        env = make_env(method=method)
        env.reset(5)
        _, rewards, _, _ = env.step(np.zeros((4, 2)))
        for rb in rewards:
            assert_close(rb.total, rb.safety + rb.progress, 1e-15)
            assert rb.safety <= 0.0   # penalties only
            assert np.isfinite(rb.total)


def test_vehicle_collision_event(make_env):
    env = make_env()
    env.reset(1)
    # drop two vehicles onto overlapping poses mid-box
    env.states[0] = [0.0, 0.0, 0.0, 0.0, 0.0]
    env.states[1] = [0.05, 0.02, 0.3, 0.0, 0.0]
    env.states[2] = [1.5, -0.45, 0.0, 0.0, 0.0]
    env.states[3] = [-1.5, -0.45, 0.0, 0.0, 0.0]
    env.path_idx[:] = [1, 1, 1, 1]
    _, _, events, info = env.step(np.zeros((4, 2)))
    kinds = [ev.kind for ev in events]
    assert COLLISION_VEHICLE in kinds
    ev = events[kinds.index(COLLISION_VEHICLE)]
    assert ev.agents == (0, 1)
    assert info["resets"][0] and info["resets"][1]
    assert info["accel"][0] == 0.0 and info["jerk"][1] == 0.0
    # respawned vehicles sit in entry regions again
    for a in ev.agents:
        region = env.map.entry_regions[env.path_of(a).entry]
        assert region.contains(env.states[a, :2])


def test_road_collision_event(make_env):
    env = make_env()
    env.reset(2)
    # straddle the outer-lane corridor boundary (y = -0.6 on the west arm)
    env.states[0] = [-1.5, -0.58, 0.5, 0.0, 0.0]
    env.states[1] = [1.5, -0.45, 0.0, 0.0, 0.0]
    env.states[2] = [0.0, 0.45, math.pi, 0.0, 0.0]
    env.states[3] = [0.45, -1.5, 0.5 * math.pi, 0.0, 0.0]
    env.path_idx[:] = [1, 1, 7, 4]
    _, _, events, info = env.step(np.zeros((4, 2)))
    kinds = {ev.kind for ev in events}
    assert COLLISION_ROAD in kinds
    road_agents = {a for ev in events if ev.kind == COLLISION_ROAD
                   for a in ev.agents}
    assert 0 in road_agents


def test_exit_event(make_env):
    env = make_env()
    env.reset(4)
    path = env.map.paths[1]          # west straight
    end = path.waypoints[-1]
    env.states[0] = [end[0], end[1], 0.0, 0.0, 0.0]
    env.states[1] = [-1.5, -0.45, 0.0, 0.0, 0.0]
    env.states[2] = [0.0, 0.45, math.pi, 0.0, 0.0]
    env.states[3] = [0.45, -1.5, 0.5 * math.pi, 0.0, 0.0]
    env.path_idx[:] = [1, 1, 7, 4]
    _, _, events, info = env.step(np.zeros((4, 2)))
    exits = [ev for ev in events if ev.kind == EXIT]
    assert len(exits) == 1 and exits[0].agents == (0,)
    assert info["resets"][0]


def test_collision_preempts_exit(make_env):
    env = make_env()
    env.reset(4)
    path = env.map.paths[1]
    end = path.waypoints[-1]
    env.states[0] = [end[0], end[1], 0.0, 0.0, 0.0]
    env.states[1] = [end[0] - 0.1, end[1] - 0.02, 0.1, 0.0, 0.0]
    env.states[2] = [0.0, 0.45, math.pi, 0.0, 0.0]
    env.states[3] = [0.45, -1.5, 0.5 * math.pi, 0.0, 0.0]
    env.path_idx[:] = [1, 1, 7, 4]
    _, _, events, _ = env.step(np.zeros((4, 2)))
    kinds = [ev.kind for ev in events]
    assert COLLISION_VEHICLE in kinds
    assert EXIT not in kinds


def test_comfort_signals(make_env):
    env = make_env()
    env.reset(6)
    v0 = env.states[:, 3].copy()
    _, _, events, info = env.step(np.zeros((4, 2)))
    if not info["resets"].any():
        v1 = env.states[:, 3]
        assert_close(info["accel"], (v1 - v0) / 0.1, 1e-12)
    _, _, _, info2 = env.step(np.full((4, 2), [3.0, 0.0]))
    for i in range(4):
        if not info2["resets"][i]:
            a, j = env.comfort_signals(i)
            assert_close(a, info2["accel"][i], 1e-15)
            assert_close(j, info2["jerk"][i], 1e-15)


def test_observation_layout(make_env):
    env = make_env(n_agents=2)
    obs = env.reset(9)
    p = env.params
    for i in range(2):
        s = env.states[i]
        assert_close(obs[i, 0], s[3] / p.v_max, 1e-12)
        assert_close(obs[i, 1], s[4] / p.delta_max, 1e-12)
        path = env.path_of(i)
        s_arc, seg, _ = path.project(s[:2])
        herr = wrap_angle(s[2] - path.tangent_angle(seg))
        assert_close(obs[i, 2], herr / math.pi, 1e-12)
        # reference points: ahead of the projection, in the ego frame
        cs, sn = math.cos(s[2]), math.sin(s[2])
        for m in range(1, 4):
            q = path.point_at(s_arc + m * env.ref_spacing)
            dx, dy = q - s[:2]
            assert_close(obs[i, 3 + 2 * (m - 1)],
                         (cs * dx + sn * dy) / env._pos_scale, 1e-12)
            assert_close(obs[i, 4 + 2 * (m - 1)],
                         (-sn * dx + cs * dy) / env._pos_scale, 1e-12)
        # other-vehicle block
        j = 1 - i
        so = env.states[j]
        dx, dy = so[:2] - s[:2]
        base = 3 + 2 * 3
        assert_close(obs[i, base], (cs * dx + sn * dy) / env._pos_scale, 1e-12)
        assert_close(obs[i, base + 2], wrap_angle(so[2] - s[2]) / math.pi, 1e-12)
        assert_close(obs[i, base + 3], so[3] / p.v_max, 1e-12)


def test_observation_sorted_by_distance(make_env):
    env = make_env()
    env.reset(11)
    obs = env.observe(0)
    base = 3 + 2 * 3
    dists = []
    for b in range(3):
        dx = obs[base + 4 * b] * env._pos_scale
        dy = obs[base + 4 * b + 1] * env._pos_scale
        dists.append(math.hypot(dx, dy))
    assert dists == sorted(dists)


def test_rect_separation_signs():
    a = rect_corners(0.0, 0.0, 0.0, 0.2, 0.1)
    b = rect_corners(0.3, 0.0, 0.0, 0.2, 0.1)
    assert rect_separation(a, b) > 0.0
    assert not rects_overlap(a, b)
    c = rect_corners(0.1, 0.0, 0.3, 0.2, 0.1)
    assert rect_separation(a, c) < 0.0
    assert rects_overlap(a, c)


def test_crowded_spawn_raises(imap, cfg):
    sim = SimConfig(n_agents=80, spawn_retries=30)
    env = IntersectionEnv(imap, cfg.vehicle, sim, RewardConfig())
    with pytest.raises(RuntimeError):
        env.reset(0)
