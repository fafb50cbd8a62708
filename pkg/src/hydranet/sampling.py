"""Curriculum-biased spatial patch sampling for training.

Patches span the full training time range; only the spatial corner is random.
Early in training the corner distribution is biased toward windows that
contain at least one violence-bearing cell, then linearly widened to uniform
sampling over all valid corners.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ValidationError, ZStackVolume

DEFAULT_PATCH_SIZE = 32


@dataclass(frozen=True)
class CurriculumSchedule:
    """Linear ramp of the violence-biased sampling probability."""

    p_start: float = 0.95
    p_end: float = 0.50
    ramp_epochs: int = 100

    def __post_init__(self):
        if not 0.0 <= self.p_end <= self.p_start <= 1.0:
            raise ValidationError(
                f"need 0 <= p_end <= p_start <= 1, got p_start={self.p_start}, p_end={self.p_end}"
            )
        if self.ramp_epochs < 0:
            raise ValidationError("ramp_epochs must be >= 0")


@dataclass
class PatchSequence:
    """One spatial window over the full training span: [T, C, ps, ps] inputs."""

    inputs: np.ndarray
    origin: tuple[int, int]
    source_month_ids: list[int]


def curriculum_probability(epoch: int, schedule: CurriculumSchedule) -> float:
    """Biased-sampling probability at a given epoch (clamped past the ramp)."""
    if epoch < 0:
        raise ValidationError(f"epoch must be >= 0, got {epoch}")
    if schedule.ramp_epochs == 0 or epoch >= schedule.ramp_epochs:
        return schedule.p_end
    frac = epoch / schedule.ramp_epochs
    return schedule.p_start + (schedule.p_end - schedule.p_start) * frac


def _hot_corner_mask(volume: ZStackVolume, patch_size: int) -> np.ndarray:
    """Boolean [H-ps+1, W-ps+1] mask of corners whose window holds activity."""
    hot = (volume.data.sum(axis=(0, 1)) > 0).astype(np.int64)
    # summed-area table gives every window sum in O(HW)
    sat = np.zeros((hot.shape[0] + 1, hot.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = hot.cumsum(axis=0).cumsum(axis=1)
    ps = patch_size
    h, w = hot.shape
    window = (
        sat[ps : h + 1, ps : w + 1]
        - sat[: h - ps + 1, ps : w + 1]
        - sat[ps : h + 1, : w - ps + 1]
        + sat[: h - ps + 1, : w - ps + 1]
    )
    return window > 0


def sample_patch(
    train_volume: ZStackVolume,
    epoch: int,
    schedule: CurriculumSchedule,
    rng: np.random.Generator,
    patch_size: int = DEFAULT_PATCH_SIZE,
) -> PatchSequence:
    """Draw one patch; corner biased toward violence-bearing windows per the schedule.

    Patches always lie fully inside the grid (no padding). If the volume holds
    no activity at all, the corner is uniform over all valid corners.
    """
    h, w = train_volume.grid.height, train_volume.grid.width
    if h < patch_size or w < patch_size:
        raise ValidationError(
            f"volume {h}x{w} is smaller than the {patch_size}x{patch_size} patch"
        )
    if train_volume.months == 0:
        raise ValidationError("cannot sample patches from an empty volume")
    hot = _hot_corner_mask(train_volume, patch_size)
    p = curriculum_probability(epoch, schedule)
    use_hot = hot.any() and rng.random() < p
    if use_hot:
        flat_choices = np.flatnonzero(hot)
        corner = int(rng.choice(flat_choices))
    else:
        corner = int(rng.integers(0, hot.size))
    row, col = divmod(corner, hot.shape[1])
    window = train_volume.data[:, :, row : row + patch_size, col : col + patch_size].copy()
    return PatchSequence(window, (row, col), list(train_volume.month_ids))


def make_batch(
    train_volume: ZStackVolume,
    batch_size: int,
    epoch: int,
    schedule: CurriculumSchedule,
    rng: np.random.Generator,
    patch_size: int = DEFAULT_PATCH_SIZE,
) -> list[PatchSequence]:
    """batch_size independent patch draws from one rng stream."""
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    return [
        sample_patch(train_volume, epoch, schedule, rng, patch_size) for _ in range(batch_size)
    ]
