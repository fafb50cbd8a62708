#!/usr/bin/env python3
"""Monte-Carlo-dropout posterior rollout.

Warms the recurrent state over the observed months, then draws posterior
sample trajectories with dropout active and the cell state frozen, and
summarizes them into point estimates and central intervals.
"""

import tempfile
from pathlib import Path

import numpy as np

from hydranet import LossConfig, ModelConfig, TrainConfig, fit, forecast_posterior, summarize
from hydranet.checkpoint import load_checkpoint
from hydranet.forecasting import volume_to_tensor, rollout_one_sample, warmup
from hydranet.synthetic import SynthSpec, generate_volume

volume = generate_volume(SynthSpec("diffusion", height=32, width=32, months=48, seed=4))
out_dir = Path(tempfile.mkdtemp(prefix="hydranet_demo_"))
checkpoint = fit(
    volume,
    ModelConfig(levels=2, base_filters=8, dropout_rate=0.25),
    LossConfig(),
    TrainConfig(seed=2, epochs=6, batches_per_epoch=2, batch_size=1, checkpoint_every=6),
    out_dir,
)
model = load_checkpoint(checkpoint).build_model()

# the cell state (long-term memory) stays pinned to its warm-up value
state = warmup(model, volume)
traj, final = rollout_one_sample(
    model, state, volume_to_tensor(volume)[-1], horizon=6,
    generator=__import__("torch").Generator().manual_seed(0),
)
frozen = all(
    bool((a == b).all()) for a, b in zip(state.cell, final.cell)
)
print(f"trajectory shape [horizon, heads, H, W]: {traj.shape}")
print(f"cell state bitwise frozen across the rollout: {frozen}")

cube = forecast_posterior(model, volume, horizon=6, n_samples=32, seed=9)
summary = summarize(cube, quantiles=(0.05, 0.95))
print(f"\nposterior cube: {cube.samples.shape} starting at month {cube.first_forecast_month_id}")

sb_mean = summary.mean[:, 0]
sb_spread = summary.quantiles[0.95][:, 0] - summary.quantiles[0.05][:, 0]
print(f"{'month':>6} {'mean magnitude':>15} {'mean 90% width':>15}")
for h in range(6):
    print(f"{cube.month_ids[h]:>6} {sb_mean[h].mean():>15.5f} {sb_spread[h].mean():>15.5f}")
print("\nspread comes from dropout-mask resampling: identical seeds reproduce it exactly")
