"""Command-line interface: train, eval, sweep, filter-analyze and plot.

Exit codes: 0 success, 2 bad configuration or arguments, 3 missing input
file, 4 numerical failure during optimization. Errors print one
machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import os
import sys

import numpy as np

from . import __version__, evaluation, marl, plotting
from .config import (ConfigError, EnvFactory, build_env, build_map,
                     config_to_dict, default_config, load_config, save_config)
from .evaluation import EvalConfig, FULL_GRIDS, REFERENCE_RESULTS
from .marl import NumericalError
from .rewards import METHODS

# Reduced grids for desk-scale comparisons: one axis per method, three
# points each, road clearance pinned for the two baselines.
QUICK_GRIDS = {
    "cbf": [{"psi_threshold": v} for v in (0.04, 0.12, 0.20)],
    "distance": [{"road_distance_threshold": 0.005,
                  "vehicle_distance_threshold": v} for v in (0.05, 0.15, 0.3)],
    "ttc": [{"road_distance_threshold": 0.005, "ttc_threshold": v}
            for v in (2.0, 4.0, 6.0)],
}

# Short CLI spellings for the threshold axes, next to the config field names.
GRID_KEY_ALIASES = {
    "psi_th": "psi_threshold",
    "d_road_th": "road_distance_threshold",
    "d_veh_th": "vehicle_distance_threshold",
    "t_ttc_th": "ttc_threshold",
}
GRID_KEYS = set(GRID_KEY_ALIASES) | set(GRID_KEY_ALIASES.values())


def parse_grid_spec(text: str) -> list:
    """Parse an inline grid like ``psi_th=0.04,0.2`` into override dicts.

    Several axes may be given separated by whitespace or ';'; the result is
    their cartesian product in the order the axes appear.
    """
    axes = {}
    for group in text.replace(";", " ").split():
        key, eq, values = group.partition("=")
        if not eq or not values:
            raise ConfigError(f"grid axis '{group}' is not key=v1,v2,...")
        key = GRID_KEY_ALIASES.get(key, key)
        if key not in GRID_KEYS:
            known = ", ".join(sorted(GRID_KEYS))
            raise ConfigError(f"unknown grid key '{group.partition('=')[0]}' "
                              f"(known: {known})")
        if key in axes:
            raise ConfigError(f"grid key '{key}' given twice")
        try:
            axes[key] = [float(v) for v in values.split(",")]
        except ValueError:
            raise ConfigError(f"grid axis '{group}' has a non-numeric value")
    if not axes:
        raise ConfigError("empty grid spec")
    keys = list(axes)
    return [dict(zip(keys, combo))
            for combo in itertools.product(*(axes[k] for k in keys))]


def _load(args) -> "RunConfig":
    if getattr(args, "config", None):
        return load_config(args.config)
    return default_config()


def _eval_config(cfg, args) -> EvalConfig:
    ec = cfg.eval
    if getattr(args, "deterministic", False) and not ec.deterministic:
        ec = dataclasses.replace(ec, deterministic=True)
    return ec


def _prepare_out(args, cfg) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    resolved = os.path.join(out, "config_resolved.yaml")
    with open(resolved, "w") as f:
        f.write(f"# cbfmarl {__version__}\n")
    with open(resolved, "a") as f:
        import yaml
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=True)
    return out


def _progress_printer(every: int = 10):
    count = [0]

    def cb(pt):
        count[0] += 1
        if count[0] % every == 0:
            print(f"  steps={pt.env_steps:>7} episodes={pt.episodes:>5} "
                  f"ep_reward={pt.mean_episode_reward:+.3f} "
                  f"step_reward={pt.mean_step_reward:+.4f} "
                  f"entropy={pt.entropy:.3f}", flush=True)

    return cb


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg)
    env = build_env(cfg, args.method)
    run = f"{args.method}_seed{args.seed}"
    print(f"training {run}: {cfg.ppo.total_env_steps} env steps")
    result = marl.train(env, cfg.ppo, args.seed,
                        progress=_progress_printer())
    evaluation.write_curve_csv(result.curve, os.path.join(out, f"curve_{run}.csv"))
    meta = {"method": args.method, "seed": args.seed,
            "env_steps": result.env_steps, "package_version": __version__}
    ckpt = os.path.join(out, f"policy_{run}.npz")
    marl.save_policy(ckpt, result.params, meta)
    last = result.curve[-1]
    print(f"done: {result.env_steps} env steps, "
          f"final ep_reward={last.mean_episode_reward:+.3f}")
    print(f"wrote {ckpt}")
    return 0


def _load_policy_env(args, cfg):
    params, meta = marl.load_policy(args.checkpoint)
    method = args.method or meta.get("method", cfg.reward.method)
    env = build_env(cfg, method)
    if env.obs_dim != params.obs_dim or env.n_agents != params.n_agents:
        raise ConfigError(
            f"checkpoint expects obs_dim={params.obs_dim}, "
            f"n_agents={params.n_agents}; environment provides "
            f"obs_dim={env.obs_dim}, n_agents={env.n_agents}")
    return params, meta, method, env


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg)
    params, meta, method, env = _load_policy_env(args, cfg)
    run = f"{method}_seed{args.seed}"
    ec = _eval_config(cfg, args)
    report = evaluation.evaluate_policy(env, params, ec,
                                        collect_filter=False,
                                        sample_seed=args.seed)
    evaluation.write_metrics_csv(report, ec, os.path.join(out, f"metrics_{run}.csv"))
    evaluation.write_rewards_csv(report.traces,
                                 os.path.join(out, f"rewards_{run}.csv"))
    for trace in report.traces:
        evaluation.write_trace_jsonl(
            trace, os.path.join(out, f"trace_{run}_ep{trace.seed}.jsonl"))
    for tot, trace in zip(report.per_seed, report.traces):
        print(f"  seed={trace.seed} total={tot.value:+.3f} exits={tot.n_exits} "
              f"collisions={tot.n_collision_events} "
              f"comfort={tot.comfort_penalty:.3f}")
    print(f"total reward: mean={report.mean_total:+.3f} "
          f"std={report.std_total:.3f} over {len(ec.seeds)} episodes")
    return 0


def cmd_filter_analyze(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg)
    params, meta, method, env = _load_policy_env(args, cfg)
    run = f"{method}_seed{args.seed}"
    ec = _eval_config(cfg, args)
    report = evaluation.evaluate_policy(env, params, ec, collect_filter=True,
                                        sample_seed=args.seed)
    evaluation.write_activation_csv(report,
                                    os.path.join(out, f"activation_{run}.csv"))
    ref = REFERENCE_RESULTS.get(method, {}).get("activation")
    ref_txt = f" (reference {ref:.1%})" if ref is not None else ""
    print(f"activation degree: {report.activation:.4%}{ref_txt}")
    print(f"mean correction: {report.mean_correction:.6f}  "
          f"infeasible fraction: {report.infeasible_fraction:.4%}")
    print(f"total reward: mean={report.mean_total:+.3f} "
          f"std={report.std_total:.3f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg)
    methods = [args.method] if args.method else list(METHODS)
    if args.grid in ("quick", "full"):
        grids = QUICK_GRIDS if args.grid == "quick" else FULL_GRIDS
    else:
        if not args.method:
            raise ConfigError("an inline --grid needs --method")
        grids = {args.method: parse_grid_spec(args.grid)}
    ckpt_dir = os.path.join(out, "checkpoints")
    if args.eval_only:
        missing = [os.path.join(ckpt_dir,
                                evaluation.checkpoint_name(m, ov, args.seed))
                   for m in methods for ov in grids[m]]
        missing = [p for p in missing if not os.path.exists(p)]
        if missing:
            raise FileNotFoundError(
                f"--eval-only: {len(missing)} checkpoint(s) absent, "
                f"first: {missing[0]}")
    else:
        os.makedirs(ckpt_dir, exist_ok=True)
    factory = EnvFactory(cfg)
    records_by_method = {}
    for method in methods:
        grid = grids[method]
        what = "evaluating" if args.eval_only else "training"
        print(f"sweep {method}: {what} {len(grid)} grid points x "
              f"{cfg.ppo.total_env_steps} env steps")

        def show(rec):
            ov = " ".join(f"{k}={v:g}" for k, v in sorted(rec.overrides.items()))
            print(f"  {ov}: total={rec.mean_total:+.3f}+-{rec.std_total:.3f} "
                  f"activation={rec.activation:.3%}", flush=True)

        records = evaluation.sweep(factory, method, grid, cfg.ppo, cfg.eval,
                                   args.seed, workers=args.workers,
                                   progress=show, checkpoint_dir=ckpt_dir,
                                   eval_only=args.eval_only)
        records_by_method[method] = records
        evaluation.write_sweep_csv(records,
                                   os.path.join(out, f"sweep_{method}.csv"))
    summary = evaluation.summarize_sweep(records_by_method)
    print(evaluation.format_summary(summary))
    with open(os.path.join(out, "sweep_summary.json"), "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    return 0


def _parse_window(text):
    if not text:
        return None
    lo, _, hi = text.partition(":")
    return int(lo), int(hi)


def cmd_plot(args) -> int:
    cfg = _load(args)
    args.infile = args.infile or args.infile_pos
    os.makedirs(args.out, exist_ok=True)
    base = lambda p: os.path.splitext(os.path.basename(p))[0]
    if args.kind == "map":
        out = os.path.join(args.out, "map.svg")
        plotting.plot_map(build_map(cfg), out)
    elif args.kind == "footprints":
        if not args.infile:
            raise ConfigError("plot footprints needs --in trace.jsonl")
        trace = evaluation.read_trace_jsonl(args.infile)
        out = os.path.join(args.out, f"footprints_{base(args.infile)}.svg")
        plotting.plot_footprints(trace, build_map(cfg), out,
                                 window=_parse_window(args.window),
                                 stride=args.stride)
    elif args.kind == "curve":
        if not args.infile:
            raise ConfigError("plot curve needs --in curve.csv")
        curve = evaluation.read_curve_csv(args.infile)
        out = os.path.join(args.out, f"curve_{base(args.infile)}.svg")
        plotting.plot_training_curve(curve, out)
    elif args.kind == "sweep":
        if not args.infile:
            raise ConfigError("plot sweep needs --in sweep.csv")
        records = evaluation.read_sweep_csv(args.infile)
        out = os.path.join(args.out, f"sweep_{base(args.infile)}.svg")
        plotting.plot_sweep(records, out)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown plot kind '{args.kind}'")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbfmarl",
        description="Intersection multi-agent RL with constraint-based "
                    "reward design")
    parser.add_argument("--version", action="version",
                        version=f"cbfmarl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, method_default=None, need_out=True):
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--method", choices=METHODS, default=method_default)
        if need_out:
            p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--deterministic", action="store_true",
                       help="force deterministic evaluation actions")

    p_train = sub.add_parser("train", help="train one policy")
    common(p_train, method_default="cbf")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained policy")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_fa = sub.add_parser("filter-analyze",
                          help="measure safety-filter activation of a policy")
    common(p_fa)
    p_fa.add_argument("--checkpoint", required=True)
    p_fa.set_defaults(func=cmd_filter_analyze)

    p_sweep = sub.add_parser("sweep",
                             help="train/evaluate a threshold grid per method")
    common(p_sweep)
    p_sweep.add_argument("--grid", default="quick",
                         help="'quick', 'full', or inline axes like "
                              "'psi_th=0.04,0.2' (needs --method)")
    p_sweep.add_argument("--eval-only", action="store_true",
                         help="reuse saved grid-point checkpoints instead "
                              "of training")
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render figures from output files")
    p_plot.add_argument("kind", choices=("map", "footprints", "curve", "sweep"))
    p_plot.add_argument("infile_pos", nargs="?", metavar="FILE",
                        help="input trace/CSV (same as --in)")
    p_plot.add_argument("--in", dest="infile")
    p_plot.add_argument("--config", help="YAML configuration file")
    p_plot.add_argument("--out", default="out")
    p_plot.add_argument("--window", help="step range a:b for footprints")
    p_plot.add_argument("--stride", type=int, default=1)
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"cbfmarl: error code=2 kind=config detail={exc}",
              file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"cbfmarl: error code=3 kind=missing-file detail={exc}",
              file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"cbfmarl: error code=4 kind=numerical detail={exc}",
              file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
