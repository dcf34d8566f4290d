"""Figure rendering for experiment reports (SVG via matplotlib)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (math.sqrt(5) - 1.0) / 2.0
fig_width = 6.0

POLICY_COLORS = {
    "ads": "#08589e",
    "random": "#a8ddb5",
    "data-variance": "#4eb3d3",
}

params = {
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    # stable element ids so identical data gives identical files
    "svg.hashsalt": "adsub",
    "svg.fonttype": "path",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def _color(policy: str):
    return POLICY_COLORS.get(policy)


def mae_bars(rows: list[dict], path, metric: str = "mae"):
    """Grouped bars of ``metric`` per budget, one bar per policy, with stderr.

    ``rows`` are summary entries with keys policy, budget, and ``metric`` ->
    {mean, stderr}.
    """
    with plt.rc_context(params):
        budgets = sorted({r["budget"] for r in rows})
        policies = list(dict.fromkeys(r["policy"] for r in rows))
        width = 0.8 / max(len(policies), 1)
        fig, ax = plt.subplots()
        x = np.arange(len(budgets))
        for j, pol in enumerate(policies):
            sel = {r["budget"]: r[metric] for r in rows if r["policy"] == pol}
            means = [sel[b]["mean"] if b in sel else np.nan for b in budgets]
            errs = [sel[b]["stderr"] if b in sel else 0.0 for b in budgets]
            ax.bar(x + (j - (len(policies) - 1) / 2) * width, means, width, yerr=errs,
                   capsize=2, label=pol, color=_color(pol))
        ax.set_xticks(x)
        ax.set_xticklabels([str(b) for b in budgets])
        ax.set_xlabel("measurement budget (actions)")
        ax.set_ylabel(metric.upper())
        ax.legend(frameon=False)
        return _save(fig, path)


def mask_heatmap(freq, shape, path, title: str = ""):
    """Per-coordinate acquisition frequency as a grid (a single mask is 0/1)."""
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(3.2, 3.0))
        im = ax.imshow(np.asarray(freq, dtype=float).reshape(shape), cmap="viridis",
                       vmin=0.0, vmax=1.0, interpolation="nearest")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_xticks([])
        ax.set_yticks([])
        if title:
            ax.set_title(title)
        return _save(fig, path)


def reconstruction_grid(targets, panels: dict, shape, path, masks: dict | None = None):
    """Targets in the first column, one column per reconstruction source.

    ``panels`` maps a column label to a list of flat reconstructions aligned
    with ``targets``; ``masks`` optionally maps the same labels to masks that
    are drawn as a translucent overlay.
    """
    n = len(targets)
    cols = 1 + len(panels)
    with plt.rc_context(params):
        fig, axes = plt.subplots(n, cols, figsize=(1.4 * cols, 1.4 * n), squeeze=False)
        for i in range(n):
            axes[i, 0].imshow(np.reshape(targets[i], shape), cmap="gray", vmin=0, vmax=1)
            for j, (label, recs) in enumerate(panels.items(), start=1):
                axes[i, j].imshow(np.reshape(recs[i], shape), cmap="gray", vmin=0, vmax=1)
                if masks and label in masks:
                    m = np.ma.masked_equal(np.reshape(masks[label][i], shape), 0)
                    axes[i, j].imshow(m, cmap="autumn", alpha=0.35, vmin=0, vmax=1)
        axes[0, 0].set_title("target")
        for j, label in enumerate(panels, start=1):
            axes[0, j].set_title(label)
        for ax in axes.ravel():
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path)


def sweep_plot(rows: list[dict], axis: str, path, metric: str = "mae"):
    """Metric mean +- stderr against the swept value, one line per policy."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for pol in dict.fromkeys(r["policy"] for r in rows):
            sel = sorted((r for r in rows if r["policy"] == pol), key=lambda r: r["value"])
            ax.errorbar([r["value"] for r in sel], [r[f"{metric}_mean"] for r in sel],
                        yerr=[r[f"{metric}_stderr"] for r in sel], marker="o", capsize=2,
                        label=pol, color=_color(pol))
        ax.set_xlabel(axis)
        ax.set_ylabel(metric.upper())
        if axis == "n_particles":
            ax.set_xscale("log", base=2)
        ax.legend(frameon=False)
        return _save(fig, path)


def bench_plot(counts, policy_times, diffusion_times, fit, path):
    """Stacked phase timings against measurement count with the linear fit."""
    counts = np.asarray(counts, dtype=float)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(counts, diffusion_times, "s-", label="guided diffusion", color="#7bccc4")
        ax.plot(counts, policy_times, "o-", label="policy", color="#08589e")
        xs = np.linspace(0, counts.max(), 50)
        ax.plot(xs, fit[0] * xs + fit[1], "--", color="0.4",
                label=f"policy fit (R$^2$={fit[2]:.3f})")
        ax.set_xlabel("number of measurements")
        ax.set_ylabel("wall-clock time (s)")
        ax.legend(frameon=False)
        return _save(fig, path)
