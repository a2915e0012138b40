"""Rank-sweep figures written straight to image files (no pyplot state)."""
from __future__ import annotations

import os

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.ticker import MaxNLocator

from .evaluation import MetricSeries, normalized_results

STYLE = {
    "cpr": dict(color="#1f77b4", marker="o"),
    "knn": dict(color="#d62728", marker="s"),
    "svd": dict(color="#2ca02c", marker="^"),
}
LABELS = {"cpr": "CPR", "knn": "kNN", "svd": "SVD"}


def _new_figure(width=5.0, height=3.4):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    ax.grid(True, alpha=0.3, linewidth=0.6)
    ax.tick_params(labelsize=8)
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    return fig, ax


def _plot(ax, s: MetricSeries, trace: str, **kw):
    pts = [(r, v) for r, v in zip(s.ranks, getattr(s, trace)) if v is not None]
    if pts:
        xs, ys = zip(*pts)
        ax.plot(xs, ys, markersize=3, linewidth=1.2, **kw)


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=150, metadata={"Software": None})


def plot_singular_traces(results: dict[str, MetricSeries], path) -> None:
    """Normalized sigma_r and sigma_r/sigma_max against rank, one colour per method."""
    norm = normalized_results(results)
    fig, ax = _new_figure()
    for name, s in norm.items():
        st = STYLE.get(name, {})
        _plot(ax, s, "sigma_r_max", linestyle="-", label=rf"{LABELS.get(name, name)} $\sigma_r$", **st)
        _plot(ax, s, "sigma_ratio", linestyle="--", label=rf"{LABELS.get(name, name)} $\sigma_r/\sigma_{{max}}$", **st)
    ax.set_xlabel("expected rank r", fontsize=9)
    ax.set_ylabel("normalized value", fontsize=9)
    ax.legend(fontsize=7, ncol=2)
    _save(fig, path)


def plot_mismatches(results: dict[str, MetricSeries], path) -> None:
    norm = normalized_results(results)
    fig, ax = _new_figure()
    for name, s in norm.items():
        _plot(ax, s, "mismatches", label=LABELS.get(name, name), **STYLE.get(name, {}))
    ax.set_xlabel("expected rank r", fontsize=9)
    ax.set_ylabel("normalized mismatches", fontsize=9)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_objective_trace(trace, path, title=None) -> None:
    fig, ax = _new_figure()
    ax.plot(range(len(trace)), trace, linewidth=1.2, color=STYLE["cpr"]["color"])
    ax.set_xlabel("epoch", fontsize=9)
    ax.set_ylabel("objective", fontsize=9)
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, path)


def render_sweep(results: dict[str, MetricSeries], outdir) -> list[str]:
    """Write ``sigma.png`` and ``mismatches.png`` into ``outdir``; return their paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = [os.path.join(outdir, "sigma.png"), os.path.join(outdir, "mismatches.png")]
    plot_singular_traces(results, paths[0])
    plot_mismatches(results, paths[1])
    return paths
