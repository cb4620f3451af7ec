"""Matplotlib renders: vehicle footprints over the map, training curves,
sweep results and the bare intersection layout. All figures are written to
files (SVG by default); nothing is shown interactively.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .geometry import IntersectionMap, rect_corners

AGENT_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red",
                "tab:purple", "tab:brown", "tab:pink", "tab:gray")


def _draw_map(ax, imap: IntersectionMap, corridor_color="0.55",
              path_color="0.8"):
    for path in imap.paths:
        ax.plot(path.waypoints[:, 0], path.waypoints[:, 1], color=path_color,
                lw=0.6, ls=":", zorder=1)
    for left, right in imap.corridors:
        for poly in (left, right):
            ax.plot(poly.points[:, 0], poly.points[:, 1],
                    color=corridor_color, lw=0.8, zorder=1)
    for rect, tag in [(r, "entry") for r in imap.entry_regions] + \
                     [(r, "exit") for r in imap.exit_regions]:
        face = "#e8f0e8" if tag == "exit" else "#f0e8e8"
        ax.add_patch(plt.Rectangle((rect.xmin, rect.ymin),
                                   rect.xmax - rect.xmin,
                                   rect.ymax - rect.ymin,
                                   facecolor=face, edgecolor="none", zorder=0))
    half = imap.config.half_extent
    ax.set_xlim(-half, half)
    ax.set_ylim(-half, half)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def plot_map(imap: IntersectionMap, out_path) -> None:
    """Render the intersection layout: paths, corridors, entry/exit regions."""
    fig, ax = plt.subplots(figsize=(6, 6))
    _draw_map(ax, imap)
    ax.set_title("intersection layout")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_footprints(trace, imap: IntersectionMap, out_path,
                    window=None, stride: int = 1) -> None:
    """Overlay the vehicles' rectangle outlines over a step window of an
    episode trace (latest poses drawn most opaque)."""
    steps = trace.steps
    lo, hi = window if window else (0, len(steps))
    lo, hi = max(0, lo), min(len(steps), hi)
    fig, ax = plt.subplots(figsize=(6.5, 6.5))
    _draw_map(ax, imap)
    length, width = trace_body_size(trace)
    picked = list(range(lo, hi, max(1, stride)))
    for rank, k in enumerate(picked):
        rec = steps[k]
        alpha = 0.15 + 0.85 * (rank + 1) / len(picked)
        for i, st in enumerate(rec["states"]):
            corners = rect_corners(st[0], st[1], st[2], length, width)
            poly = plt.Polygon(corners, closed=True, fill=False,
                               edgecolor=AGENT_COLORS[i % len(AGENT_COLORS)],
                               lw=0.9, alpha=alpha, zorder=3)
            ax.add_patch(poly)
    last = steps[picked[-1]] if picked else None
    if last is not None:
        for i, st in enumerate(last["states"]):
            ax.annotate(str(i), (st[0], st[1]), fontsize=8,
                        color=AGENT_COLORS[i % len(AGENT_COLORS)],
                        ha="center", va="center", zorder=4)
    t0, t1 = lo * trace.dt, (hi - 1) * trace.dt if hi > lo else lo * trace.dt
    ax.set_title(f"footprints, t = {t0:.1f} s to {t1:.1f} s (seed {trace.seed})")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def trace_body_size(trace) -> tuple:
    """Body size recorded in the trace header if present, else the default."""
    length = getattr(trace, "body_length", None)
    if length is not None:
        return length, trace.body_width
    from .dynamics import VehicleParams
    p = VehicleParams()
    return p.body_length, p.body_width


def plot_training_curve(curve, out_path) -> None:
    """Learning curve: per-update mean episode reward and mean step reward."""
    steps = np.array([pt.env_steps for pt in curve])
    ep = np.array([pt.mean_episode_reward for pt in curve])
    st = np.array([pt.mean_step_reward for pt in curve])
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(steps, ep, color="tab:blue", lw=1.2)
    axes[0].set_xlabel("env steps")
    axes[0].set_ylabel("mean episode reward")
    axes[1].plot(steps, st, color="tab:orange", lw=1.2)
    axes[1].set_xlabel("env steps")
    axes[1].set_ylabel("mean step reward")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_sweep(records, out_path) -> None:
    """Sweep results: line with per-seed std for one threshold axis, heatmap
    of the mean total reward for two axes."""
    keys = sorted({k for r in records for k in r.overrides})
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(keys) == 1:
        key = keys[0]
        xs = np.array([r.overrides[key] for r in records])
        order = np.argsort(xs)
        means = np.array([r.mean_total for r in records])[order]
        stds = np.array([r.std_total for r in records])[order]
        ax.errorbar(xs[order], means, yerr=stds, marker="o", capsize=3,
                    color="tab:blue")
        ax.set_xlabel(key)
        ax.set_ylabel("total reward")
        ax.grid(alpha=0.3)
    else:
        kx, ky = keys[0], keys[1]
        xs = sorted({r.overrides[kx] for r in records})
        ys = sorted({r.overrides[ky] for r in records})
        grid = np.full((len(ys), len(xs)), np.nan)
        for r in records:
            grid[ys.index(r.overrides[ky]), xs.index(r.overrides[kx])] = \
                r.mean_total
        im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
        ax.set_xticks(range(len(xs)), [f"{v:g}" for v in xs])
        ax.set_yticks(range(len(ys)), [f"{v:g}" for v in ys])
        ax.set_xlabel(kx)
        ax.set_ylabel(ky)
        for (iy, ix), v in np.ndenumerate(grid):
            if np.isfinite(v):
                ax.text(ix, iy, f"{v:.1f}", ha="center", va="center",
                        fontsize=7, color="w")
        fig.colorbar(im, ax=ax, label="total reward")
    method = records[0].method if records else ""
    ax.set_title(f"sweep: {method}")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
