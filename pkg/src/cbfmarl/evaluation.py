"""Evaluation harness: deterministic policy rollouts, the episode-level
total-reward metric (exits - collisions - comfort), safety-filter activation
measurements, hyperparameter sweeps and the delimited/JSONL outputs.

Reference results measured at full training scale are kept alongside so
sweep summaries can print them next to the desk-scale measurements.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import cbf as cbf_mod
from . import marl
from . import safety_filter as sf
from .env import EpisodeEvent, IntersectionEnv, EXIT, COLLISION_ROAD, COLLISION_VEHICLE

# Reference outcomes (full-scale training) for the three reward methods:
# mean/std of the total reward across the threshold grids, the best grid
# point, and the safety-filter activation degree.
REFERENCE_RESULTS = {
    "cbf": {"mean": 7.2, "std": 1.1, "best": 8.5, "activation": 0.013},
    "ttc": {"mean": -2.3, "std": 3.7, "best": 7.7, "activation": 0.019},
    "distance": {"mean": -2.8, "std": 3.3, "best": 4.5, "activation": 0.100},
}

# Threshold grids of the full study (sweep defaults; the road-clearance
# threshold spans its own axis for the two baselines).
FULL_GRIDS = {
    "cbf": [{"psi_threshold": v} for v in
            (0.04, 0.06, 0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20)],
    "distance": [{"road_distance_threshold": dr, "vehicle_distance_threshold": dv}
                 for dr in (0.003, 0.005, 0.01, 0.02)
                 for dv in (0.02, 0.05, 0.1, 0.15, 0.2, 0.3)],
    "ttc": [{"road_distance_threshold": dr, "ttc_threshold": tt}
            for dr in (0.003, 0.005, 0.01, 0.02)
            for tt in (2.0, 3.0, 4.0, 5.0, 6.0)],
}


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation episode setup and total-reward weights."""

    horizon_seconds: float = 60.0
    comfort_weight: float = 0.2
    accel_norm: float = 3.0          # [m/s^2]
    jerk_norm: float = 20.0          # [m/s^3]
    seeds: tuple = (0, 1, 2, 3, 4)
    deterministic: bool = True
    activation_epsilon: float = 1e-6


@dataclass
class EpisodeTrace:
    """Everything recorded during one evaluation episode."""

    seed: int
    n_agents: int
    dt: float
    method: str
    steps: list = field(default_factory=list)    # per-step dict records
    events: list = field(default_factory=list)   # EpisodeEvent
    corrections: np.ndarray | None = None        # (K, N) filter corrections
    feasible: np.ndarray | None = None           # (K, N) QP feasibility


@dataclass
class TotalReward:
    value: float
    n_exits: int
    n_collision_events: int
    n_collided_vehicles: int
    comfort_penalty: float


def total_reward(trace: EpisodeTrace, config: EvalConfig) -> TotalReward:
    """Episode metric: exits minus collision events minus the normalized
    accel/jerk comfort penalty averaged over agents and steps."""
    n_exits = sum(1 for ev in trace.events if ev.kind == EXIT)
    col_events = [ev for ev in trace.events
                  if ev.kind in (COLLISION_VEHICLE, COLLISION_ROAD)]
    collided = {a for ev in col_events for a in ev.agents}
    k_eval = len(trace.steps)
    acc = 0.0
    for rec in trace.steps:
        for a, j in zip(rec["accel"], rec["jerk"]):
            acc += (abs(a) / config.accel_norm) ** 2
            acc += (abs(j) / config.jerk_norm) ** 2
    comfort = config.comfort_weight / (trace.n_agents * max(1, k_eval)) * acc
    value = float(n_exits) - float(len(col_events)) - comfort
    return TotalReward(value, n_exits, len(col_events), len(collided), comfort)


def run_episode(env: IntersectionEnv, params: marl.PolicyParams, seed: int,
                config: EvalConfig, collect_filter: bool = False,
                rng: np.random.Generator | None = None) -> EpisodeTrace:
    """One evaluation episode of horizon_seconds.

    Actions are the squashed policy means unless config.deterministic is
    False (then ``rng`` drives sampling). With collect_filter the per-agent
    safety QP is solved each step purely for measurement; executed actions
    are never filtered.
    """
    k_eval = int(round(config.horizon_seconds / env.sim.dt))
    obs = env.reset(seed)
    n = env.n_agents
    trace = EpisodeTrace(seed, n, env.sim.dt, env.reward_config.method)
    if collect_filter:
        trace.corrections = np.zeros((k_eval, n))
        trace.feasible = np.ones((k_eval, n), dtype=bool)

    for k in range(k_eval):
        if config.deterministic:
            actions = marl.mean_actions(params, obs)
        else:
            actions, _, _ = marl.sample_actions(params, obs, rng)
        if collect_filter:
            corridors = [env.corridor_of(i) for i in range(n)]
            cons = cbf_mod.all_constraints(env.states, corridors, env.decomp,
                                           env.params, actions, env.cbf_config)
            inputs = {i: actions[i] for i in range(n)}
            for i in range(n):
                res = sf.apply_filter(i, cons[i], inputs, env.params,
                                      env.cbf_config, config.activation_epsilon)
                trace.corrections[k, i] = res.correction
                trace.feasible[k, i] = res.feasible
        states_before = env.states.copy()
        nobs, rewards, events, info = env.step(actions)
        trace.steps.append({
            "step": k,
            "states": states_before.tolist(),
            "actions": np.asarray(actions).tolist(),
            "rewards": [rb.total for rb in rewards],
            "safety": [rb.safety for rb in rewards],
            "progress": [rb.progress for rb in rewards],
            "accel": info["accel"].tolist(),
            "jerk": info["jerk"].tolist(),
            "events": [[ev.kind, list(ev.agents)] for ev in events],
        })
        trace.events.extend(events)
        obs = nobs
    return trace


@dataclass
class EvalReport:
    """Aggregated evaluation over seeds."""

    per_seed: list                    # TotalReward per seed
    traces: list                      # EpisodeTrace per seed
    mean_total: float
    std_total: float                  # population convention
    activation: float | None = None
    mean_correction: float | None = None
    infeasible_fraction: float | None = None


def evaluate_policy(env: IntersectionEnv, params: marl.PolicyParams,
                    config: EvalConfig, collect_filter: bool = False,
                    sample_seed: int = 0) -> EvalReport:
    """Evaluate a policy across the configured seeds."""
    rng = np.random.default_rng(sample_seed)
    totals = []
    traces = []
    for seed in config.seeds:
        trace = run_episode(env, params, int(seed), config,
                            collect_filter=collect_filter, rng=rng)
        traces.append(trace)
        totals.append(total_reward(trace, config))
    vals = np.array([t.value for t in totals])
    report = EvalReport(totals, traces, float(vals.mean()),
                        float(vals.std()))
    if collect_filter:
        corr = np.concatenate([t.corrections.ravel() for t in traces])
        feas = np.concatenate([t.feasible.ravel() for t in traces])
        report.activation = sf.activation_degree(corr, config.activation_epsilon)
        report.mean_correction = float(corr.mean())
        report.infeasible_fraction = float(1.0 - feas.mean())
    return report


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepRecord:
    """One grid point: thresholds, per-seed totals and filter activation."""

    method: str
    overrides: dict
    per_seed_totals: list
    mean_total: float
    std_total: float
    activation: float
    env_steps: int


def checkpoint_name(method: str, overrides: dict, seed: int) -> str:
    """Filename for one sweep grid point's trained policy."""
    tag = "_".join(f"{k}={overrides[k]:g}" for k in sorted(overrides))
    return f"sweep_{method}_{tag}_seed{seed}.npz"


def run_grid_point(env_factory, method: str, overrides: dict,
                   ppo_config: marl.PpoConfig, eval_config: EvalConfig,
                   seed: int, checkpoint_dir=None,
                   eval_only: bool = False) -> SweepRecord:
    """Train (or load, with eval_only) one threshold setting and evaluate it.

    With a checkpoint_dir, each trained policy is saved there under
    checkpoint_name(); eval_only loads that file instead of training and
    raises FileNotFoundError when it is absent.
    """
    path = (os.path.join(checkpoint_dir, checkpoint_name(method, overrides,
                                                         seed))
            if checkpoint_dir else None)
    if eval_only:
        if path is None:
            raise ValueError("eval_only requires a checkpoint_dir")
        params, meta = marl.load_policy(path)
        env_steps = int(meta.get("env_steps", 0))
    else:
        env = env_factory(method, overrides)
        result = marl.train(env, ppo_config, seed)
        params, env_steps = result.params, result.env_steps
        if path is not None:
            marl.save_policy(path, params,
                             {"method": method, "seed": seed,
                              "env_steps": env_steps,
                              "overrides": dict(overrides)})
    eval_env = env_factory(method, overrides)
    report = evaluate_policy(eval_env, params, eval_config,
                             collect_filter=True)
    return SweepRecord(method, dict(overrides),
                       [t.value for t in report.per_seed],
                       report.mean_total, report.std_total,
                       float(report.activation), env_steps)


def sweep(env_factory, method: str, grid: list, ppo_config: marl.PpoConfig,
          eval_config: EvalConfig, seed: int, workers: int = 1,
          progress=None, checkpoint_dir=None, eval_only: bool = False) -> list:
    """Train/evaluate every grid point of one method.

    workers > 1 distributes grid points over a process pool; results are
    returned in grid order either way. Determinism is guaranteed in
    single-worker mode. checkpoint_dir/eval_only are forwarded to
    run_grid_point (save each point's policy / reuse saved policies).
    """
    records = []
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(workers) as pool:
            jobs = [pool.apply_async(run_grid_point,
                                     (env_factory, method, ov, ppo_config,
                                      eval_config, seed, checkpoint_dir,
                                      eval_only))
                    for ov in grid]
            for job in jobs:
                rec = job.get()
                records.append(rec)
                if progress is not None:
                    progress(rec)
    else:
        for ov in grid:
            rec = run_grid_point(env_factory, method, ov, ppo_config,
                                 eval_config, seed, checkpoint_dir, eval_only)
            records.append(rec)
            if progress is not None:
                progress(rec)
    return records


def summarize_sweep(records_by_method: dict) -> dict:
    """Across-grid mean/std (population) of the per-point mean totals, the
    best point, and the mean activation degree, per method."""
    summary = {}
    for method, records in records_by_method.items():
        means = np.array([r.mean_total for r in records])
        best = records[int(np.argmax(means))]
        summary[method] = {
            "mean": float(means.mean()),
            "std": float(means.std()),
            "best": float(means.max()),
            "best_overrides": dict(best.overrides),
            "activation": float(np.mean([r.activation for r in records])),
            "n_points": len(records),
        }
    return summary


def format_summary(summary: dict) -> str:
    """Comparison table: measured values next to the full-scale reference."""
    lines = ["method     mean      std      best     activation   "
             "(reference: mean/std/best/activation)"]
    for method, stats in summary.items():
        ref = REFERENCE_RESULTS.get(method)
        ref_txt = ("{:+.1f} / {:.1f} / {:+.1f} / {:.1%}".format(
            ref["mean"], ref["std"], ref["best"], ref["activation"])
            if ref else "-")
        lines.append(
            "{:<9} {:+8.3f} {:8.3f} {:+8.3f}   {:>8.2%}   ({})".format(
                method, stats["mean"], stats["std"], stats["best"],
                stats["activation"], ref_txt))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# file outputs
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    """Shortest round-trip float formatting keeps reruns byte-identical."""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_curve_csv(curve: list, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["env_steps", "episodes", "mean_episode_reward",
                    "mean_step_reward", "actor_loss", "value_loss", "entropy"])
        for pt in curve:
            w.writerow([pt.env_steps, pt.episodes,
                        _fmt(pt.mean_episode_reward), _fmt(pt.mean_step_reward),
                        _fmt(pt.actor_loss), _fmt(pt.value_loss),
                        _fmt(pt.entropy)])


def write_trace_jsonl(trace: EpisodeTrace, path) -> None:
    with open(path, "w") as f:
        header = {"seed": trace.seed, "n_agents": trace.n_agents,
                  "dt": trace.dt, "method": trace.method}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in trace.steps:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace_jsonl(path) -> EpisodeTrace:
    with open(path) as f:
        header = json.loads(f.readline())
        trace = EpisodeTrace(header["seed"], header["n_agents"], header["dt"],
                             header.get("method", "cbf"))
        for line in f:
            rec = json.loads(line)
            trace.steps.append(rec)
            for kind, agents in rec.get("events", []):
                trace.events.append(EpisodeEvent(rec["step"], kind,
                                                 tuple(agents)))
    return trace


def write_rewards_csv(traces: list, path) -> None:
    """One row per agent-step: reward breakdown across evaluation episodes."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "step", "agent", "safety", "progress", "total"])
        for trace in traces:
            for rec in trace.steps:
                for i in range(trace.n_agents):
                    w.writerow([trace.seed, rec["step"], i,
                                _fmt(rec["safety"][i]),
                                _fmt(rec["progress"][i]),
                                _fmt(rec["rewards"][i])])


def write_metrics_csv(report: EvalReport, config: EvalConfig, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "total_reward", "exits", "collision_events",
                    "collided_vehicles", "comfort_penalty"])
        for trace, tot in zip(report.traces, report.per_seed):
            w.writerow([trace.seed, _fmt(tot.value), tot.n_exits,
                        tot.n_collision_events, tot.n_collided_vehicles,
                        _fmt(tot.comfort_penalty)])
        w.writerow(["mean", _fmt(report.mean_total), "", "", "", ""])
        w.writerow(["std", _fmt(report.std_total), "", "", "", ""])
        if report.activation is not None:
            w.writerow(["activation", _fmt(report.activation), "", "", "", ""])


def write_activation_csv(report: EvalReport, path) -> None:
    """Per-step filter corrections plus the aggregate activation degree."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "step", "agent", "correction", "feasible"])
        for trace in report.traces:
            if trace.corrections is None:
                continue
            k_eval, n = trace.corrections.shape
            for k in range(k_eval):
                for i in range(n):
                    w.writerow([trace.seed, k, i,
                                _fmt(float(trace.corrections[k, i])),
                                int(trace.feasible[k, i])])
        w.writerow(["activation", _fmt(report.activation), "", "", ""])
        w.writerow(["mean_correction", _fmt(report.mean_correction), "", "", ""])
        w.writerow(["infeasible_fraction", _fmt(report.infeasible_fraction),
                    "", "", ""])


def write_sweep_csv(records: list, path) -> None:
    keys = sorted({k for r in records for k in r.overrides})
    n_seeds = max((len(r.per_seed_totals) for r in records), default=0)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", *keys,
                    *[f"total_seed{k}" for k in range(n_seeds)],
                    "mean_total", "std_total", "activation", "env_steps"])
        for r in records:
            w.writerow([r.method,
                        *[_fmt(r.overrides.get(k, "")) for k in keys],
                        *[_fmt(v) for v in r.per_seed_totals],
                        _fmt(r.mean_total), _fmt(r.std_total),
                        _fmt(r.activation), r.env_steps])


def read_curve_csv(path) -> list:
    points = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            points.append(marl.CurvePoint(
                int(row["env_steps"]), int(row["episodes"]),
                float(row["mean_episode_reward"]),
                float(row["mean_step_reward"]), float(row["actor_loss"]),
                float(row["value_loss"]), float(row["entropy"])))
    return points


def read_sweep_csv(path) -> list:
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        seed_cols = [c for c in reader.fieldnames if c.startswith("total_seed")]
        fixed = {"method", "mean_total", "std_total", "activation",
                 "env_steps", *seed_cols}
        keys = [c for c in reader.fieldnames if c not in fixed]
        for row in reader:
            overrides = {k: float(row[k]) for k in keys if row[k] != ""}
            totals = [float(row[c]) for c in seed_cols if row[c] != ""]
            records.append(SweepRecord(row["method"], overrides, totals,
                                       float(row["mean_total"]),
                                       float(row["std_total"]),
                                       float(row["activation"]),
                                       int(row["env_steps"])))
    return records


def export_footprints_csv(trace: EpisodeTrace, path, window=None) -> None:
    """Raw footprint data: one row per agent-step with pose (window is a
    (start, end) step range, end exclusive)."""
    lo, hi = window if window else (0, len(trace.steps))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "agent", "x", "y", "heading", "speed", "steering"])
        for rec in trace.steps[lo:hi]:
            for i, st in enumerate(rec["states"]):
                w.writerow([rec["step"], i, *[_fmt(float(v)) for v in st]])
