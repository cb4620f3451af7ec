"""Reward terms: clipped barrier penalty, heuristic baselines, progress."""

import math

import numpy as np
import pytest

from cbfmarl.cbf import (CbfConfig, CbfEvaluation, ConstraintValue, ROAD_LEFT,
                         ROAD_RIGHT, VEHICLE_PAIR)
from cbfmarl.dynamics import VehicleParams
from cbfmarl.geometry import Polyline, ReferencePath, decompose_rectangle
from cbfmarl.rewards import (METHODS, RewardConfig, cbf_reward, clip_rho,
                             distance_baseline_reward, progress_reward,
                             scene_distances, step_reward, ttc,
                             ttc_baseline_reward)

from conftest import assert_close

P = VehicleParams()
D = decompose_rectangle(P.body_length, P.body_width, P.n_circles)


def test_clip_rho_table():
    cases = [(-0.05, 0.1, -0.5), (0.2, 0.1, 0.0), (-0.2, 0.1, -1.0),
             (0.0, 0.1, 0.0), (-0.1, 0.1, -1.0), (-0.02, 0.04, -0.5)]
    for psi, th, want in cases:
        assert_close(clip_rho(psi, th), want, 1e-15, msg=f"rho({psi},{th})")
    with pytest.raises(ValueError):
        clip_rho(0.1, 0.0)
    with pytest.raises(ValueError):
        clip_rho(0.1, -1.0)


def _cv(psi, source, agents):
    return ConstraintValue(psi, source, agents,
                           CbfEvaluation(0, 0, 0, {}, source, agents))


def test_cbf_reward_aggregation():
    cons = [_cv(-0.05, ROAD_LEFT, (0,)), _cv(0.3, ROAD_RIGHT, (0,)),
            _cv(-0.02, VEHICLE_PAIR, (0, 1)), _cv(-0.2, VEHICLE_PAIR, (0, 2))]
    reward, per = cbf_reward(cons, 0.1)
    # vehicle term: mean(-0.2, -1.0) = -0.6; total (-0.6 - 0.5 + 0)/3
    assert_close(reward, -0.3666666666666667, 1e-15)
    assert_close(per[ROAD_LEFT], -0.5, 1e-15)
    assert_close(per[ROAD_RIGHT], 0.0, 1e-15)
    assert_close(per["veh_0_1"], -0.2, 1e-15)
    assert_close(per["veh_0_2"], -1.0, 1e-15)


def test_cbf_reward_no_neighbors():
    cons = [_cv(-0.1, ROAD_LEFT, (0,)), _cv(-0.1, ROAD_RIGHT, (0,))]
    reward, per = cbf_reward(cons, 0.1)
    assert_close(reward, -2.0 / 3.0, 1e-15)


def test_progress_straight_path():
    path = ReferencePath(np.array([[0.0, 0.0], [3.0, 0.0]]), "straight", 0, 2)
    cfg = RewardConfig()
    r = progress_reward(path, [1.0, 0.0], [1.05, 0.0], cfg, 1.0, 0.1)
    assert_close(r, 0.05, 1e-12)
    # full-speed along the path gives exactly the progress weight
    r = progress_reward(path, [1.0, 0.0], [1.1, 0.0], cfg, 1.0, 0.1)
    assert_close(r, cfg.progress_weight, 1e-12)
    # backward motion is penalized symmetrically
    r = progress_reward(path, [1.0, 0.0], [0.9, 0.0], cfg, 1.0, 0.1)
    assert_close(r, -cfg.progress_weight, 1e-12)


def test_progress_degenerate_at_path_end():
    path = ReferencePath(np.array([[0.0, 0.0], [1.0, 0.0]]), "straight", 0, 2)
    r = progress_reward(path, [1.0, 0.0], [1.05, 0.0], RewardConfig(), 1.0, 0.1)
    assert r == 0.0


def test_scene_distances_hand_case():
    states = np.array([[0.0, 0.0, 0.0, 0.5, 0.0],
                       [0.5, 0.0, 0.0, 0.5, 0.0]])
    left = Polyline(np.array([[-5.0, 0.15], [5.0, 0.15]]), "right")
    right = Polyline(np.array([[-5.0, -0.15], [5.0, -0.15]]), "left")
    corridors = [(left, right), (left, right)]
    road, pair = scene_distances(states, corridors, D)
    assert_close(road, np.full((2, 2), 0.15 - D.radius), 1e-12)
    expected_gap = 0.5 - 2.0 / 15.0 - 2.0 * D.radius
    assert_close(pair[0, 1], expected_gap, 1e-12)
    assert pair[0, 0] == math.inf


def test_distance_baseline_values():
    cfg = RewardConfig(method="distance", road_distance_threshold=0.005,
                       vehicle_distance_threshold=0.1)
    reward, per = distance_baseline_reward([0.003, 0.01], [0.05], cfg)
    assert_close(per[ROAD_LEFT], -0.4, 1e-15)
    assert_close(per[ROAD_RIGHT], 0.0, 1e-15)
    assert_close(reward, (-0.5 - 0.4 + 0.0) / 3.0, 1e-15)
    with pytest.raises(ValueError):
        distance_baseline_reward([-0.001, 0.01], [0.05], cfg)
    with pytest.raises(ValueError):
        distance_baseline_reward([0.01, 0.01], [-0.05], cfg)


def test_ttc_head_on_frozen():
    si = np.array([0.0, 0.0, 0.0, 0.5, 0.0])
    sj = np.array([1.0, 0.0, math.pi, 0.3, 0.0])
    assert_close(ttc(si, sj, D, P), 0.9331020301890004, 1e-12)


def test_ttc_special_cases():
    # already overlapping -> 0
    si = np.array([0.0, 0.0, 0.0, 0.5, 0.0])
    sj = np.array([0.05, 0.0, math.pi, 0.3, 0.0])
    assert ttc(si, sj, D, P) == 0.0
    # diverging -> inf
    sj = np.array([1.0, 0.0, 0.0, 0.9, 0.0])
    assert math.isinf(ttc(si, np.array([1.0, 0.0, 0.0, 0.9, 0.0]), D, P))
    # parallel same speed -> inf
    sj = np.array([1.0, 0.5, 0.0, 0.5, 0.0])
    assert math.isinf(ttc(si, sj, D, P))


def test_ttc_baseline_values():
    cfg = RewardConfig(method="ttc", road_distance_threshold=0.005,
                       ttc_threshold=4.0)
    reward, per = ttc_baseline_reward([1.0, 1.0], [2.0, math.inf], cfg)
    assert_close(per["veh_0"], -0.5, 1e-15)
    assert_close(per["veh_1"], 0.0, 1e-15)
    assert_close(reward, np.mean([-0.5, 0.0]) / 3.0, 1e-15)
    with pytest.raises(ValueError):
        ttc_baseline_reward([-1.0, 1.0], [2.0], cfg)


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(method="nope")
    with pytest.raises(ValueError):
        RewardConfig(n_reference=2)   # weights length mismatch


def test_step_reward_all_methods(imap):
    states = np.zeros((3, 5))
    paths = [imap.paths[0], imap.paths[4], imap.paths[8]]
    corridors = [imap.corridors[0], imap.corridors[4], imap.corridors[8]]
    for i, p in enumerate(paths):
        pt, ang, _ = p.pose_at(0.4 + 0.2 * i)
        states[i] = [pt[0], pt[1], ang, 0.5, 0.0]
    inputs = np.zeros((3, 2))
    for method in METHODS:
        cfg = RewardConfig(method=method)
        p_prev = states[1, :2]
        p_next = p_prev + np.array([0.03, 0.0])
        rb = step_reward(1, states, corridors, paths[1], p_prev, p_next,
                         inputs, cfg, CbfConfig(), D, P)
        assert rb.agent == 1
        assert_close(rb.total, rb.safety + rb.progress, 1e-15)
        assert np.isfinite(rb.total)
        keys = set(rb.per_source)
        assert ROAD_LEFT in keys and ROAD_RIGHT in keys
        veh_keys = {k for k in keys if k.startswith("veh")}
        if method == "cbf":
            assert veh_keys == {"veh_0_1", "veh_1_2"}
        else:
            assert veh_keys == {"veh_0", "veh_2"}
