"""Seeded synthetic event generators with analytically known structure.

These stand in for real conflict data in every desk-scale test: each generator
is a pure function of its spec, and its future state is either exactly known
(moving_blob, static_hotspots) or exactly reproducible (diffusion).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import EventRecord, GridSpec, ValidationError, build_volume, ZStackVolume

KINDS = ("moving_blob", "diffusion", "static_hotspots")


@dataclass(frozen=True)
class SynthSpec:
    """Dimensions, seed, and kind-specific parameters for one generator run.

    moving_blob: a blob_size square of constant sb fatalities translating by
    blob_speed=(drow, dcol) cells per month on a torus.

    diffusion: independent presence/absence processes per channel; an active
    cell persists with probability persist_prob and ignites each 4-neighbor
    with probability ignite_prob; month 0 seeds each cell with init_prob;
    active cells emit geometric counts with the given mean.

    static_hotspots: hotspot_count fixed cells emit a per-hotspot constant
    count (geometric draw with mean hotspot_mean, drawn once) every month.
    """

    kind: str
    height: int = 32
    width: int = 32
    months: int = 60
    seed: int = 0
    # moving_blob
    blob_size: int = 4
    blob_speed: tuple[int, int] = (0, 1)
    blob_fatalities: int = 20
    blob_start: tuple[int, int] = (0, 0)
    # diffusion: defaults sit just above criticality so activity persists
    # through long horizons instead of dying out or saturating
    persist_prob: float = 0.75
    ignite_prob: float = 0.10
    init_prob: float = 0.02
    fatality_mean: float = 8.0
    channels: tuple[str, ...] = ("sb", "ns", "os")
    # static_hotspots
    hotspot_count: int = 5
    hotspot_mean: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown synthetic kind {self.kind!r} (choose from {KINDS})")
        if self.height <= 0 or self.width <= 0 or self.months <= 0:
            raise ValidationError("synthetic dimensions must be positive")
        for name in ("persist_prob", "ignite_prob", "init_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0,1], got {v}")
        if self.fatality_mean < 1.0 or self.hotspot_mean < 1.0:
            raise ValidationError("geometric fatality means must be >= 1")
        if any(c not in ("sb", "ns", "os") for c in self.channels):
            raise ValidationError(f"channels must be drawn from sb/ns/os, got {self.channels}")


def _record(row: int, col: int, month: int, channel: str, count: int) -> EventRecord:
    kwargs = {"fatalities_" + channel: int(count)}
    return EventRecord(int(row), int(col), int(month), **kwargs)


def moving_blob(spec: SynthSpec) -> list[EventRecord]:
    """Square of constant sb fatalities translating one step per month (torus wrap)."""
    if spec.blob_size > min(spec.height, spec.width):
        raise ValidationError(
            f"blob of side {spec.blob_size} does not fit in {spec.height}x{spec.width} grid"
        )
    if spec.blob_fatalities <= 0:
        raise ValidationError("blob_fatalities must be positive")
    dr, dc = spec.blob_speed
    r0, c0 = spec.blob_start
    events = []
    for t in range(spec.months):
        top = (r0 + t * dr) % spec.height
        left = (c0 + t * dc) % spec.width
        for i in range(spec.blob_size):
            for j in range(spec.blob_size):
                events.append(_record(
                    (top + i) % spec.height, (left + j) % spec.width, t, "sb", spec.blob_fatalities
                ))
    return events


def blob_cells(spec: SynthSpec, month: int) -> set[tuple[int, int]]:
    """Exact cell set occupied by the blob in a given month (the oracle)."""
    dr, dc = spec.blob_speed
    r0, c0 = spec.blob_start
    top = (r0 + month * dr) % spec.height
    left = (c0 + month * dc) % spec.width
    return {
        ((top + i) % spec.height, (left + j) % spec.width)
        for i in range(spec.blob_size)
        for j in range(spec.blob_size)
    }


def diffusion(spec: SynthSpec) -> list[EventRecord]:
    """Persist/ignite contact process per channel with geometric fatality counts."""
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(len(spec.channels))
    events: list[EventRecord] = []
    geom_p = 1.0 / spec.fatality_mean
    for channel, child in zip(spec.channels, children):
        rng = np.random.default_rng(child)
        active = rng.random((spec.height, spec.width)) < spec.init_prob
        for t in range(spec.months):
            if t > 0:
                survive = active & (rng.random(active.shape) < spec.persist_prob)
                ignited = np.zeros_like(active)
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    neighbor = np.zeros_like(active)
                    src = active
                    if dr == 1:
                        neighbor[1:, :] = src[:-1, :]
                    elif dr == -1:
                        neighbor[:-1, :] = src[1:, :]
                    elif dc == 1:
                        neighbor[:, 1:] = src[:, :-1]
                    else:
                        neighbor[:, :-1] = src[:, 1:]
                    ignited |= neighbor & (rng.random(active.shape) < spec.ignite_prob)
                active = survive | ignited
            rows, cols = np.nonzero(active)
            if len(rows):
                counts = rng.geometric(geom_p, size=len(rows))
                for r, c, n in zip(rows, cols, counts):
                    events.append(_record(r, c, t, channel, n))
    return events


def static_hotspots(spec: SynthSpec) -> list[EventRecord]:
    """Fixed random cells emitting a constant per-hotspot count every month."""
    n_cells = spec.height * spec.width
    if spec.hotspot_count > n_cells:
        raise ValidationError(f"{spec.hotspot_count} hotspots exceed {n_cells} grid cells")
    rng = np.random.default_rng(spec.seed)
    flat = rng.choice(n_cells, size=spec.hotspot_count, replace=False)
    intensities = rng.geometric(1.0 / spec.hotspot_mean, size=spec.hotspot_count)
    events = []
    for t in range(spec.months):
        for cell, n in zip(flat, intensities):
            events.append(_record(cell // spec.width, cell % spec.width, t, "sb", n))
    return events


_GENERATORS = {
    "moving_blob": moving_blob,
    "diffusion": diffusion,
    "static_hotspots": static_hotspots,
}


def generate_events(spec: SynthSpec) -> list[EventRecord]:
    return _GENERATORS[spec.kind](spec)


def generate_volume(spec: SynthSpec) -> ZStackVolume:
    """Generate events and tensorize them in one step."""
    grid = GridSpec(height=spec.height, width=spec.width)
    return build_volume(generate_events(spec), grid, (0, spec.months - 1))
