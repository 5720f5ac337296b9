"""Report figures written next to the JSON outputs.

Uses the object-oriented Agg API rather than pyplot so figures can be built
from worker threads and never touch global state.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .evaluation import IOU_THRESHOLDS, RECALL_STEPS, EvalReport

# no timestamp/version chunks, so identical inputs give identical bytes
PNG_METADATA = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=100, metadata=PNG_METADATA)
    return path


def plot_pr_curves(report: EvalReport, path, thresholds: Sequence[float] = (0.50, 0.75)) -> Path:
    """Interpolated precision/recall per class, one panel per IoU threshold."""
    recall = np.linspace(0.0, 1.0, RECALL_STEPS + 1)
    fig = Figure(figsize=(4.5 * len(thresholds), 4.0))
    axes = fig.subplots(1, len(thresholds), squeeze=False)[0]
    for ax, thr in zip(axes, thresholds):
        t = IOU_THRESHOLDS.index(round(thr, 2))
        for label, curves in sorted(report.precision.items()):
            ap = report.per_class[label][t]
            ax.plot(recall, curves[t], lw=1.2, label=f"class {label} ({100 * ap:.1f})")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"IoU {thr:.2f}")
        ax.grid(alpha=0.3)
        if report.precision:
            ax.legend(fontsize=7, loc="lower left")
    fig.tight_layout()
    return _save(fig, path)


def plot_ap_by_threshold(report: EvalReport, path) -> Path:
    fig = Figure(figsize=(5.0, 3.5))
    ax = fig.subplots()
    for label, aps in sorted(report.per_class.items()):
        ax.plot(IOU_THRESHOLDS, aps, marker="o", ms=3, lw=1, alpha=0.7, label=f"class {label}")
    if report.per_class:
        mean = np.mean([aps for aps in report.per_class.values()], axis=0)
        ax.plot(IOU_THRESHOLDS, mean, color="k", lw=2, label="mean")
        ax.legend(fontsize=7)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("AP")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_model_ranking(ranked: Sequence[tuple[int, EvalReport]], k: int, path) -> Path:
    """Bar chart of AP@0.50:0.95 per model in rank order; the selected top-k are highlighted."""
    ids = [str(m) for m, _ in ranked]
    aps = [100.0 * (r.ap or 0.0) for _, r in ranked]
    colors = ["tab:blue" if i < k else "tab:gray" for i in range(len(ranked))]
    fig = Figure(figsize=(max(4.0, 0.3 * len(ranked) + 1.5), 3.5))
    ax = fig.subplots()
    ax.bar(range(len(ranked)), aps, color=colors)
    ax.set_xticks(range(len(ranked)))
    ax.set_xticklabels(ids, rotation=90, fontsize=7)
    ax.set_xlabel("model id (ranked)")
    ax.set_ylabel("AP@0.50:0.95 (%)")
    ax.set_title(f"top {min(k, len(ranked))} of {len(ranked)} selected")
    fig.tight_layout()
    return _save(fig, path)
