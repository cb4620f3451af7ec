"""Episode metric, evaluation reports, sweep plumbing and file round trips."""

import csv
import math

import numpy as np
import pytest

from cbfmarl import evaluation, marl
from cbfmarl.env import COLLISION_ROAD, COLLISION_VEHICLE, EXIT, EpisodeEvent
from cbfmarl.evaluation import (EvalConfig, EpisodeTrace, FULL_GRIDS,
                                REFERENCE_RESULTS, SweepRecord, TotalReward,
                                evaluate_policy, format_summary, run_episode,
                                summarize_sweep, total_reward)
from cbfmarl.marl import PpoConfig, init_policy

from conftest import assert_close


def _trace(n_agents, accel_rows, jerk_rows, events):
    tr = EpisodeTrace(seed=0, n_agents=n_agents, dt=0.1, method="cbf")
    for k, (arow, jrow) in enumerate(zip(accel_rows, jerk_rows)):
        tr.steps.append({"step": k, "states": [], "actions": [],
                         "rewards": [0.0] * n_agents,
                         "safety": [0.0] * n_agents,
                         "progress": [0.0] * n_agents,
                         "accel": list(arow), "jerk": list(jrow),
                         "events": []})
    tr.events = events
    return tr


def test_total_reward_hand_traces():
    cfg = EvalConfig()
    # comfort-only trace
    tr = _trace(2, [[1.0, -2.0], [0.5, 0.0], [3.0, 1.5]],
                [[10.0, 0.0], [-5.0, 2.0], [0.0, -20.0]], [])
    tot = total_reward(tr, cfg)
    assert_close(tot.value, -0.10519444444444444, 1e-12)
    assert tot.n_exits == 0 and tot.n_collision_events == 0
    # events-only trace
    ev = [EpisodeEvent(0, EXIT, (0,)), EpisodeEvent(1, EXIT, (1,)),
          EpisodeEvent(2, EXIT, (0,)), EpisodeEvent(3, COLLISION_VEHICLE, (0, 1))]
    tr = _trace(2, [[0.0, 0.0]] * 2, [[0.0, 0.0]] * 2, ev)
    tot = total_reward(tr, cfg)
    assert_close(tot.value, 2.0, 1e-12)
    assert tot.n_collided_vehicles == 2
    # single-step comfort at the normalizers
    tr = _trace(1, [[3.0]], [[20.0]], [EpisodeEvent(0, EXIT, (0,)),
                                       EpisodeEvent(0, COLLISION_ROAD, (0,)),
                                       EpisodeEvent(0, COLLISION_VEHICLE, (0,))])
    tot = total_reward(tr, cfg)
    assert_close(tot.value, -1.4, 1e-12)


def test_reference_results_table():
    assert REFERENCE_RESULTS["cbf"] == {"mean": 7.2, "std": 1.1, "best": 8.5,
                                        "activation": 0.013}
    assert REFERENCE_RESULTS["ttc"] == {"mean": -2.3, "std": 3.7, "best": 7.7,
                                        "activation": 0.019}
    assert REFERENCE_RESULTS["distance"] == {"mean": -2.8, "std": 3.3,
                                             "best": 4.5, "activation": 0.100}
    assert len(FULL_GRIDS["cbf"]) == 9
    assert len(FULL_GRIDS["distance"]) == 24
    assert len(FULL_GRIDS["ttc"]) == 20


def _mini_policy(env):
    return init_policy(env.obs_dim, env.n_agents, env.params.input_low,
                       env.params.input_high, PpoConfig(), 0)


def test_run_episode_records(make_env):
    env = make_env()
    params = _mini_policy(env)
    ec = EvalConfig(horizon_seconds=2.0, seeds=(0,))
    trace = run_episode(env, params, 0, ec)
    assert len(trace.steps) == 20
    assert trace.steps[0]["step"] == 0
    # first recorded states equal the reset states
    env2 = make_env()
    obs = env2.reset(0)
    assert_close(trace.steps[0]["states"], env2.states, 1e-15)
    assert trace.corrections is None


def test_evaluate_policy_aggregation(make_env):
    env = make_env()
    params = _mini_policy(env)
    ec = EvalConfig(horizon_seconds=1.5, seeds=(0, 1, 2))
    rep = evaluate_policy(env, params, ec)
    vals = np.array([t.value for t in rep.per_seed])
    assert_close(rep.mean_total, vals.mean(), 1e-12)
    assert_close(rep.std_total, vals.std(), 1e-12)   # population convention
    assert rep.activation is None
    assert len(rep.traces) == 3


def test_evaluate_policy_with_filter(make_env):
    env = make_env()
    params = _mini_policy(env)
    ec = EvalConfig(horizon_seconds=1.0, seeds=(0, 1))
    rep = evaluate_policy(env, params, ec, collect_filter=True)
    assert rep.traces[0].corrections.shape == (10, 4)
    assert 0.0 <= rep.activation <= 1.0
    assert rep.infeasible_fraction is not None


def test_trace_jsonl_roundtrip(make_env, tmp_path):
    env = make_env()
    params = _mini_policy(env)
    trace = run_episode(env, params, 3, EvalConfig(horizon_seconds=1.0))
    path = tmp_path / "trace.jsonl"
    evaluation.write_trace_jsonl(trace, path)
    back = evaluation.read_trace_jsonl(path)
    assert back.seed == 3 and back.n_agents == 4 and back.dt == 0.1
    assert len(back.steps) == len(trace.steps)
    assert_close(back.steps[4]["states"], trace.steps[4]["states"], 0)
    assert [ev.kind for ev in back.events] == [ev.kind for ev in trace.events]


def test_curve_csv_roundtrip(tmp_path):
    pts = [marl.CurvePoint(100, 2, -0.5, 0.0123456789012345, 0.1, 0.2, 1.7),
           marl.CurvePoint(200, 5, 1.25, -3e-7, 0.0, 0.5, 1.6)]
    path = tmp_path / "curve.csv"
    evaluation.write_curve_csv(pts, path)
    back = evaluation.read_curve_csv(path)
    assert back == pts


def test_sweep_csv_roundtrip(tmp_path):
    recs = [SweepRecord("cbf", {"psi_threshold": 0.1}, [1.0, 2.0], 1.5, 0.5,
                        0.013, 1000),
            SweepRecord("cbf", {"psi_threshold": 0.2}, [0.0, -1.0], -0.5, 0.5,
                        0.02, 1000)]
    path = tmp_path / "sweep_cbf.csv"
    evaluation.write_sweep_csv(recs, path)
    back = evaluation.read_sweep_csv(path)
    assert [r.mean_total for r in back] == [1.5, -0.5]
    assert back[0].overrides == {"psi_threshold": 0.1}
    assert back[0].per_seed_totals == [1.0, 2.0]
    assert back[1].activation == 0.02


def test_metrics_and_rewards_csv(make_env, tmp_path):
    env = make_env()
    params = _mini_policy(env)
    ec = EvalConfig(horizon_seconds=1.0, seeds=(0, 1))
    rep = evaluate_policy(env, params, ec, collect_filter=True)
    mpath = tmp_path / "metrics.csv"
    evaluation.write_metrics_csv(rep, ec, mpath)
    rows = list(csv.reader(open(mpath)))
    assert rows[0][0] == "seed" and len(rows) == 1 + 2 + 3
    rpath = tmp_path / "rewards.csv"
    evaluation.write_rewards_csv(rep.traces, rpath)
    rows = list(csv.reader(open(rpath)))
    assert len(rows) == 1 + 2 * 10 * 4      # header + seeds*steps*agents
    apath = tmp_path / "activation.csv"
    evaluation.write_activation_csv(rep, apath)
    rows = list(csv.reader(open(apath)))
    assert rows[-3][0] == "activation"
    fpath = tmp_path / "footprints.csv"
    evaluation.export_footprints_csv(rep.traces[0], fpath, window=(2, 5))
    rows = list(csv.reader(open(fpath)))
    assert len(rows) == 1 + 3 * 4


def test_summary_formatting():
    recs = {"cbf": [SweepRecord("cbf", {"psi_threshold": t}, [v], v, 0.0,
                                0.01, 100)
                    for t, v in ((0.04, 1.0), (0.12, 3.0), (0.2, 2.0))]}
    summary = summarize_sweep(recs)
    s = summary["cbf"]
    assert_close(s["mean"], 2.0, 1e-12)
    assert_close(s["std"], np.std([1.0, 3.0, 2.0]), 1e-12)
    assert s["best"] == 3.0
    assert s["best_overrides"] == {"psi_threshold": 0.12}
    text = format_summary(summary)
    assert "cbf" in text and "7.2" in text and "1.3%" in text
