"""Per-task metric-series figures: four panels over the forecast months."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import METRIC_NAMES, TASKS, EvalReport

_TASK_LABELS = {"sb": "state-based", "ns": "non-state", "os": "one-sided"}


def save_metric_plots(report: EvalReport, out_dir) -> list[Path]:
    """One PNG per task: MSE, AP, AUC, Brier series, model vs no-change baseline."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for task in TASKS:
        rows = [r for r in report.rows if r.task == task]
        if not rows:
            continue
        fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
        for ax, metric in zip(axes.ravel(), METRIC_NAMES):
            series = [(r.month_id, r.model, r.baseline) for r in rows if r.metric == metric]
            months = [s[0] for s in series]
            model = [s[1] for s in series]
            base = [s[2] for s in series]
            ax.plot(months, model, marker="o", markersize=3, label="model")
            if not all(math.isnan(b) for b in base):
                ax.plot(months, base, marker="s", markersize=3, linestyle="--", label="no-change")
            ax.set_title(metric.upper())
            ax.grid(True, alpha=0.3)
        axes[1][0].set_xlabel("month id")
        axes[1][1].set_xlabel("month id")
        axes[0][0].legend(loc="best", fontsize=8)
        fig.suptitle(f"{_TASK_LABELS.get(task, task)} violence — forecast metrics by month")
        fig.tight_layout()
        path = out_dir / f"{task}_metrics.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
