"""Posterior forecasting: deterministic warm-up, frozen-cell autoregressive rollout.

The recurrent state is warmed up once over the observed months with dropout
disabled. Each posterior sample is then an independent 36-step (by default)
rollout with dropout active and masks resampled every step: the model's three
regression outputs feed back as the next month's inputs, hidden states update
normally, and cell states are restored to their warm-up values after every
step so the long-term memory acts as a stabilizing anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ._util import seed_int
from .ingest import (
    GridSpec,
    ValidationError,
    VolumeMetadataError,
    ZStackVolume,
    _read_container,
    _write_container,
)
from .losses import HEAD_NAMES
from .model import HydraNet, RecurrentState


@dataclass
class ForecastCube:
    """Posterior samples [S, horizon, 6 heads, H, W] plus alignment metadata."""

    samples: np.ndarray
    first_forecast_month_id: int
    grid: GridSpec = field(default_factory=GridSpec)
    head_names: tuple[str, ...] = HEAD_NAMES

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.head_names = tuple(self.head_names)
        if self.samples.ndim != 5:
            raise ValidationError(f"cube must be 5-D [S,Hf,6,H,W], got shape {self.samples.shape}")
        s, hf, heads, h, w = self.samples.shape
        if heads != len(self.head_names):
            raise ValidationError(f"{heads} head channels but {len(self.head_names)} head names")
        if (h, w) != (self.grid.height, self.grid.width):
            raise ValidationError(f"cube spatial {h}x{w} does not match grid")
        if self.samples.size:
            if not np.isfinite(self.samples).all():
                raise ValidationError("cube contains non-finite values")
            if self.samples[:, :, :3].min() < 0:
                raise ValidationError("regression channels must be >= 0")
            cls = self.samples[:, :, 3:]
            if cls.min() < 0 or cls.max() > 1:
                raise ValidationError("classification channels must lie in [0,1]")

    @property
    def month_ids(self) -> list[int]:
        return list(
            range(self.first_forecast_month_id, self.first_forecast_month_id + self.samples.shape[1])
        )


@dataclass
class ForecastSummary:
    """Per-cell mean, population std, and central quantiles across samples."""

    mean: np.ndarray
    std: np.ndarray
    quantiles: dict[float, np.ndarray]
    first_forecast_month_id: int
    head_names: tuple[str, ...] = HEAD_NAMES

    @property
    def month_ids(self) -> list[int]:
        return list(
            range(self.first_forecast_month_id, self.first_forecast_month_id + self.mean.shape[0])
        )


class RolloutDivergedError(RuntimeError):
    """A rollout produced non-finite values; the message carries the step index."""


def volume_to_tensor(volume: ZStackVolume) -> torch.Tensor:
    """Volume as a [T, 1, C, H, W] float32 batch of one."""
    return torch.from_numpy(volume.data).unsqueeze(1)


def warmup(model: HydraNet, observed: ZStackVolume) -> RecurrentState:
    """Deterministic pass over all observed months; predictions are discarded."""
    if observed.months == 0:
        raise ValidationError("cannot warm up on an empty volume")
    with torch.inference_mode():
        inputs = volume_to_tensor(observed)
        state = model.init_state(1, (observed.grid.height, observed.grid.width))
        _, state = model.forward_sequence(inputs, state, "deterministic")
    return state


def rollout_one_sample(
    model: HydraNet,
    state: RecurrentState,
    last_input: torch.Tensor,
    horizon: int,
    generator: torch.Generator | None = None,
    mode: str = "mc_inference",
) -> tuple[np.ndarray, RecurrentState]:
    """One autoregressive trajectory of [horizon, 6, H, W] with frozen cell state.

    The first step consumes the last observed month; afterwards the previous
    step's regression outputs are the inputs. Returns the trajectory and the
    final state (whose cell tensors equal the warm-up cells exactly).
    """
    if horizon < 0:
        raise ValidationError(f"horizon must be >= 0, got {horizon}")
    h, w = last_input.shape[-2], last_input.shape[-1]
    frames: list[np.ndarray] = []
    frozen_cells = [c.clone() for c in state.cell]
    current = RecurrentState(list(state.hidden), [c.clone() for c in frozen_cells])
    x = last_input
    with torch.inference_mode():
        for step_idx in range(horizon):
            out, advanced = model.step(x, current, mode, generator)
            frame = torch.cat([out.reg, out.cls], dim=1)[0]
            if not torch.isfinite(frame).all():
                raise RolloutDivergedError(f"non-finite forecast at rollout step {step_idx}")
            frames.append(frame.cpu().numpy().astype(np.float32))
            current = RecurrentState(advanced.hidden, [c.clone() for c in frozen_cells])
            x = out.reg
    if frames:
        traj = np.stack(frames)
    else:
        traj = np.zeros((0, len(HEAD_NAMES), h, w), dtype=np.float32)
    return traj, current


def forecast_posterior(
    model: HydraNet,
    observed: ZStackVolume,
    horizon: int = 36,
    n_samples: int = 128,
    seed: int = 0,
    mode: str = "mc_inference",
) -> ForecastCube:
    """One warm-up, then n_samples independent rollouts with derived rng streams."""
    if n_samples < 1:
        raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
    state = warmup(model, observed)
    last_input = volume_to_tensor(observed)[-1]
    children = np.random.SeedSequence(seed).spawn(n_samples)
    samples = []
    for child in children:
        generator = torch.Generator().manual_seed(seed_int(child))
        traj, _ = rollout_one_sample(model, state, last_input, horizon, generator, mode)
        samples.append(traj)
    cube = np.stack(samples) if horizon > 0 else np.zeros(
        (n_samples, 0, len(HEAD_NAMES), observed.grid.height, observed.grid.width), np.float32
    )
    return ForecastCube(cube, observed.month_ids[-1] + 1, observed.grid)


def summarize(cube: ForecastCube, quantiles: tuple[float, ...] = (0.05, 0.95)) -> ForecastSummary:
    """Collapse the sample axis to mean, population std, and requested quantiles."""
    if cube.samples.shape[0] < 1:
        raise ValidationError("summarize needs at least one sample")
    qs = sorted(float(q) for q in quantiles)
    if any(not 0.0 <= q <= 1.0 for q in qs):
        raise ValidationError(f"quantiles must lie in [0,1], got {quantiles}")
    mean = cube.samples.mean(axis=0, dtype=np.float64)
    std = cube.samples.std(axis=0, dtype=np.float64)
    qmaps = {q: np.quantile(cube.samples.astype(np.float64), q, axis=0) for q in qs}
    return ForecastSummary(mean, std, qmaps, cube.first_forecast_month_id, cube.head_names)


def write_cube(cube: ForecastCube, path) -> None:
    """Persist a cube in the shared container with a leading sample axis."""
    meta = {
        "container": "forecast_cube",
        "version": 1,
        "head_names": list(cube.head_names),
        "first_forecast_month_id": cube.first_forecast_month_id,
        "month_ids": cube.month_ids,
        "grid": cube.grid.to_dict(),
    }
    _write_container(path, meta, cube.samples)


def read_cube(path) -> ForecastCube:
    meta, array = _read_container(path)
    if meta.get("container") != "forecast_cube":
        raise VolumeMetadataError(
            f"{path}: container kind {meta.get('container')!r}, expected 'forecast_cube'"
        )
    if array.ndim != 5:
        raise VolumeMetadataError(f"{path}: expected 5-D cube payload, got shape {array.shape}")
    try:
        return ForecastCube(
            array,
            int(meta["first_forecast_month_id"]),
            GridSpec.from_dict(meta["grid"]),
            tuple(meta["head_names"]),
        )
    except (KeyError, TypeError) as exc:
        raise VolumeMetadataError(f"{path}: incomplete cube metadata ({exc})") from exc
    except ValidationError as exc:
        raise VolumeMetadataError(f"{path}: metadata inconsistent with payload ({exc})") from exc
