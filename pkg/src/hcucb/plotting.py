"""SVG figures rendered from the CSV artifacts only.

Rendering is pinned for byte-stable output: fixed hash salt, no date or
creator metadata, and text kept as ``<text>`` elements.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .metrics import read_csv  # noqa: E402

_RC = {
    "svg.hashsalt": "hcucb",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}
_METADATA = {"Date": None, "Creator": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=_METADATA)
    return path


def _figure(ncols: int = 1) -> tuple[Figure, list]:
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5.0 * ncols, 3.6))
        axes = [fig.add_subplot(1, ncols, i + 1) for i in range(ncols)]
    return fig, axes


def regret_curves_svg(csv_path, svg_path) -> Path:
    """Cumulative and average regret against ``t`` from a metrics CSV.

    One thin line per seed plus the across-seed mean.
    """
    _, rows = read_csv(csv_path)
    by_seed: dict = defaultdict(list)
    for r in rows:
        by_seed[r["seed"]].append((int(r["t"]), float(r["regret"])))
    fig, (ax_cum, ax_avg) = _figure(2)
    with matplotlib.rc_context(_RC):
        curves = []
        for seed in sorted(by_seed, key=int):
            pts = sorted(by_seed[seed])
            ts = np.array([p[0] for p in pts])
            rs = np.array([p[1] for p in pts])
            curves.append((ts, rs))
            ax_cum.plot(ts, rs, color="0.7", linewidth=0.6)
            ax_avg.plot(ts, rs / ts, color="0.7", linewidth=0.6)
        if curves and all(np.array_equal(c[0], curves[0][0]) for c in curves):
            ts = curves[0][0]
            mean = np.mean([c[1] for c in curves], axis=0)
            ax_cum.plot(ts, mean, color="C0", linewidth=1.6, label="mean")
            ax_avg.plot(ts, mean / ts, color="C0", linewidth=1.6, label="mean")
            ax_cum.legend(loc="upper left")
        ax_cum.set_xlabel("round t")
        ax_cum.set_ylabel("cumulative regret")
        ax_avg.set_xscale("log")
        ax_avg.set_xlabel("round t")
        ax_avg.set_ylabel("average regret R_t / t")
        fig.tight_layout()
    return _save(fig, svg_path)


def comparison_svg(curves_csv, svg_path) -> Path:
    """Mean cumulative regret per sweep cell with a one-SE band."""
    _, rows = read_csv(curves_csv)
    by_cell: dict = defaultdict(list)
    for r in rows:
        se = float(r["se_regret"]) if r["se_regret"] else 0.0
        by_cell[r["cell"]].append((int(r["t"]), float(r["mean_regret"]), se, r["label"]))
    fig, (ax,) = _figure(1)
    with matplotlib.rc_context(_RC):
        for i, cell in enumerate(sorted(by_cell)):
            pts = sorted(by_cell[cell])
            ts = np.array([p[0] for p in pts])
            mean = np.array([p[1] for p in pts])
            se = np.array([p[2] for p in pts])
            colour = f"C{i % 10}"
            ax.plot(ts, mean, color=colour, linewidth=1.4, label=pts[0][3] or cell)
            ax.fill_between(ts, mean - se, mean + se, color=colour, alpha=0.2, linewidth=0)
        ax.set_xlabel("round t")
        ax.set_ylabel("mean cumulative regret")
        if by_cell:
            ax.legend(loc="upper left", fontsize=7)
        fig.tight_layout()
    return _save(fig, svg_path)


def gap_scatter_svg(csv_path, svg_path) -> Path:
    """Measured decomposition gap against the ``2 eps/(1-gamma)`` bound."""
    _, rows = read_csv(csv_path)
    gaps = np.array([float(r["gap"]) for r in rows])
    bounds = np.array([float(r["bound_2eps"]) for r in rows])
    fig, (ax,) = _figure(1)
    with matplotlib.rc_context(_RC):
        ax.scatter(bounds, gaps, s=8, color="C0")
        top = float(max(bounds.max(initial=0.0), gaps.max(initial=0.0), 1e-12))
        ax.plot([0, top], [0, top], color="C3", linewidth=1.0, label="gap = bound")
        ax.set_xlabel("2 eps / (1 - gamma)")
        ax.set_ylabel("max gap V* - V_H")
        ax.legend(loc="upper left")
        fig.tight_layout()
    return _save(fig, svg_path)
