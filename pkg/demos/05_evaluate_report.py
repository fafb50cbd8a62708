#!/usr/bin/env python3
"""Scoring a forecast against held-out truth, with the no-change baseline.

Builds a perfect-forecast summary and a persistence baseline for a synthetic
hold-out window, runs the full per-month scoring, and emits the report CSV and
the per-task metric figures.
"""

import tempfile
from pathlib import Path

import numpy as np

from hydranet import (
    PartitionScheme,
    RegionMask,
    binarize,
    evaluate_forecast,
    no_change_baseline,
    partition,
)
from hydranet.forecasting import ForecastSummary
from hydranet.plots import save_metric_plots
from hydranet.synthetic import SynthSpec, generate_volume

volume = generate_volume(SynthSpec("diffusion", height=24, width=24, months=40, seed=6))
train, test = partition(volume, PartitionScheme("custom", 0, 39, test_months=8))

# a deliberately blurred "forecast": the truth smoothed toward its mean
rng = np.random.default_rng(0)
mean = np.zeros((test.months, 6, 24, 24))
mean[:, :3] = 0.7 * test.data + 0.1
mean[:, 3:] = np.clip(0.8 * binarize(test.data) + 0.1, 0, 1)
summary = ForecastSummary(mean, np.zeros_like(mean), {}, test.month_ids[0])

baseline = no_change_baseline(train, test.months)
mask = RegionMask.bounding_box_exclusion(train.grid, rows=(0, 5), cols=(0, 5), name="corner-excluded")

report = evaluate_forecast(summary, test, mask, baseline)
print(f"rows: {len(report.rows)} (8 months x 3 tasks x 4 metrics)")
print(f"scored cells per month: {report.masked_cells} of {24 * 24} (mask: {report.mask_name})\n")

print(f"{'task':>5} {'metric':>7} {'model':>10} {'no-change':>10} {'excluded':>9}")
for (task, metric), (model, base, excluded) in report.means().items():
    print(f"{task:>5} {metric:>7} {model:>10.4f} {base:>10.4f} {excluded:>9}")

out_dir = Path(tempfile.mkdtemp(prefix="hydranet_demo_"))
report.to_csv(out_dir / "report.csv")
paths = save_metric_plots(report, out_dir)
print(f"\nreport and figures in {out_dir}:")
for p in [out_dir / "report.csv", *paths]:
    print(f"  {p.name}")
