"""Forecast scoring: MSE, AP, AUC, Brier per month and task, with region masks.

AUC follows the Mann-Whitney formulation (ties count one half). AP is
non-interpolated with a deterministic tie order — score descending, then cell
index ascending — documented because tied scores change AP. Months where a
ranking metric is undefined (single-class truth) are recorded as NaN sentinels
and excluded from over-month means, with the exclusion count kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import GridSpec, ValidationError, ZStackVolume, binarize

TASKS = ("sb", "ns", "os")
METRIC_NAMES = ("mse", "ap", "auc", "brier")
MASK_HEADER = "row,col"


@dataclass
class RegionMask:
    """Boolean include-mask over the grid; True cells are scored."""

    include: np.ndarray
    name: str = "full"

    def __post_init__(self):
        self.include = np.asarray(self.include, dtype=bool)
        if self.include.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {self.include.shape}")
        if not self.include.any():
            raise ValidationError("mask excludes every cell")

    @property
    def cell_count(self) -> int:
        return int(self.include.sum())

    @classmethod
    def full(cls, grid: GridSpec) -> "RegionMask":
        return cls(np.ones((grid.height, grid.width), dtype=bool), "full")

    @classmethod
    def bounding_box_exclusion(
        cls, grid: GridSpec, rows: tuple[int, int], cols: tuple[int, int], name: str = "box-excluded"
    ) -> "RegionMask":
        """Everything except an inclusive row/col box (region-exclusion style)."""
        include = np.ones((grid.height, grid.width), dtype=bool)
        include[rows[0] : rows[1] + 1, cols[0] : cols[1] + 1] = False
        return cls(include, name)

    @classmethod
    def from_file(cls, path, grid: GridSpec) -> "RegionMask":
        """Load a `row,col` include-list; header required, `#` comments allowed."""
        include = np.zeros((grid.height, grid.width), dtype=bool)
        header_seen = False
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                if not header_seen:
                    if text != MASK_HEADER:
                        raise ValidationError(
                            f"{path}:{lineno}: expected header {MASK_HEADER!r}, got {text!r}"
                        )
                    header_seen = True
                    continue
                parts = text.split(",")
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: expected 2 fields")
                try:
                    row, col = int(parts[0]), int(parts[1])
                except ValueError as exc:
                    raise ValidationError(f"{path}:{lineno}: non-integer cell ({exc})") from exc
                if not (0 <= row < grid.height and 0 <= col < grid.width):
                    raise ValidationError(f"{path}:{lineno}: cell ({row},{col}) outside grid")
                include[row, col] = True
        if not header_seen:
            raise ValidationError(f"{path}: missing header line {MASK_HEADER!r}")
        return cls(include, Path(path).stem)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(MASK_HEADER + "\n")
            for row, col in zip(*np.nonzero(self.include)):
                fh.write(f"{row},{col}\n")


def _masked(values: np.ndarray, mask: RegionMask | None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if mask is None:
        return arr.ravel()
    if mask.include.shape != arr.shape:
        raise ValidationError(
            f"mask shape {mask.include.shape} does not match data shape {arr.shape}"
        )
    return arr[mask.include]


def mse(pred: np.ndarray, target: np.ndarray, mask: RegionMask | None = None) -> float:
    """Mean squared difference over masked cells."""
    p = _masked(pred, mask)
    t = _masked(target, mask)
    if p.shape != t.shape:
        raise ValidationError(f"shape mismatch: {np.shape(pred)} vs {np.shape(target)}")
    if p.size == 0:
        raise ValidationError("mse over an empty selection")
    return float(np.mean((p - t) ** 2))


def brier(prob: np.ndarray, label: np.ndarray, mask: RegionMask | None = None) -> float:
    """Mean squared probability error against binary labels."""
    p = _masked(prob, mask)
    y = _masked(label, mask)
    if p.shape != y.shape:
        raise ValidationError(f"shape mismatch: {np.shape(prob)} vs {np.shape(label)}")
    if p.size == 0:
        raise ValidationError("brier over an empty selection")
    if p.min() < 0 or p.max() > 1:
        raise ValidationError("probabilities must lie in [0,1]")
    return float(np.mean((p - y) ** 2))


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(score: np.ndarray, label: np.ndarray, mask: RegionMask | None = None) -> float:
    """P(random positive outscores random negative), ties one half (Mann-Whitney).

    Returns NaN when the masked labels are single-class (undefined metric).
    """
    s = _masked(score, mask)
    y = _masked(label, mask)
    if s.shape != y.shape:
        raise ValidationError(f"shape mismatch: {np.shape(score)} vs {np.shape(label)}")
    pos = y > 0
    n_pos = int(pos.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = _midranks(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(score: np.ndarray, label: np.ndarray, mask: RegionMask | None = None) -> float:
    """Non-interpolated AP: mean precision at each positive's rank.

    Ranking order is score descending with ties broken by ascending cell index
    (the flattened masked order); NaN when there are no positives.
    """
    s = _masked(score, mask)
    y = _masked(label, mask)
    if s.shape != y.shape:
        raise ValidationError(f"shape mismatch: {np.shape(score)} vs {np.shape(label)}")
    pos = y > 0
    if not pos.any():
        return math.nan
    order = np.lexsort((np.arange(len(s)), -s))
    hits = pos[order]
    cum = np.cumsum(hits)
    ranks = np.arange(1, len(s) + 1)
    return float(np.mean(cum[hits] / ranks[hits]))


def no_change_baseline(observed: ZStackVolume, horizon: int) -> np.ndarray:
    """Persistence forecast [horizon, 6, H, W]: last observed month repeated.

    Regression heads carry its magnitudes, classification heads their
    binarization as {0,1}-valued probabilities.
    """
    if observed.months == 0:
        raise ValidationError("no-change baseline needs at least one observed month")
    if horizon < 0:
        raise ValidationError("horizon must be >= 0")
    last = observed.data[-1].astype(np.float64)
    frame = np.concatenate([last, binarize(last).astype(np.float64)], axis=0)
    return np.repeat(frame[None], horizon, axis=0)


@dataclass
class EvalRow:
    month_id: int
    task: str
    metric: str
    model: float
    baseline: float


@dataclass
class EvalReport:
    """Per-month metric rows plus derived over-month means with sentinel handling."""

    rows: list[EvalRow] = field(default_factory=list)
    mask_name: str = "full"
    masked_cells: int = 0

    def means(self) -> dict[tuple[str, str], tuple[float, float, int]]:
        """(task, metric) -> (model mean, baseline mean, excluded month count).

        Sentinel (NaN) months are excluded from each column's mean separately;
        ``excluded`` counts the model-side sentinels (for ranking metrics these
        are exactly the single-class truth months, identical for both columns).
        """
        out: dict[tuple[str, str], tuple[float, float, int]] = {}
        for task in TASKS:
            for metric in METRIC_NAMES:
                pairs = [
                    (r.model, r.baseline)
                    for r in self.rows
                    if r.task == task and r.metric == metric
                ]
                if not pairs:
                    continue
                model_vals = [m for m, _ in pairs if not math.isnan(m)]
                base_vals = [b for _, b in pairs if not math.isnan(b)]
                model_mean = float(np.mean(model_vals)) if model_vals else math.nan
                base_mean = float(np.mean(base_vals)) if base_vals else math.nan
                out[(task, metric)] = (model_mean, base_mean, len(pairs) - len(model_vals))
        return out

    def to_csv(self, path) -> None:
        """month rows, then `mean` rows; `#` comments carry mask metadata."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# mask={self.mask_name} cells={self.masked_cells}\n")
            fh.write("month_id,task,metric,model,baseline\n")
            for r in self.rows:
                fh.write(f"{r.month_id},{r.task},{r.metric},{r.model!r},{r.baseline!r}\n")
            for (task, metric), (m, b, excluded) in self.means().items():
                fh.write(f"mean,{task},{metric},{m!r},{b!r}\n")

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        rows: list[EvalRow] = []
        mask_name, masked_cells = "full", 0
        header_seen = False
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text:
                    continue
                if text.startswith("#"):
                    for token in text[1:].split():
                        if token.startswith("mask="):
                            mask_name = token[5:]
                        elif token.startswith("cells="):
                            masked_cells = int(token[6:])
                    continue
                if not header_seen:
                    if text != "month_id,task,metric,model,baseline":
                        raise ValidationError(f"{path}:{lineno}: unexpected header {text!r}")
                    header_seen = True
                    continue
                parts = text.split(",")
                if len(parts) != 5:
                    raise ValidationError(f"{path}:{lineno}: expected 5 fields")
                if parts[0] == "mean":
                    continue
                rows.append(
                    EvalRow(int(parts[0]), parts[1], parts[2], float(parts[3]), float(parts[4]))
                )
        if not header_seen:
            raise ValidationError(f"{path}: missing report header")
        return cls(rows, mask_name, masked_cells)


def evaluate_forecast(
    summary,
    truth: ZStackVolume,
    mask: RegionMask | None = None,
    baseline: np.ndarray | None = None,
) -> EvalReport:
    """Score point forecasts (and the baseline) per month and task.

    Regression heads are scored with MSE against magnitudes; classification
    heads with AP/AUC/Brier against presences recomputed from the truth volume.
    """
    if truth.months == 0:
        raise ValidationError("truth volume is empty")
    if list(summary.month_ids) != list(truth.month_ids):
        raise ValidationError(
            f"forecast months {summary.month_ids[:3]}..{summary.month_ids[-1:]} do not align "
            f"with truth months {truth.month_ids[:3]}..{truth.month_ids[-1:]}"
        )
    horizon = truth.months
    if baseline is not None and baseline.shape != (horizon, 6) + truth.data.shape[2:]:
        raise ValidationError(
            f"baseline shape {baseline.shape} does not match [{horizon},6,H,W]"
        )
    if mask is None:
        mask = RegionMask.full(truth.grid)
    rows: list[EvalRow] = []
    for t in range(horizon):
        month_id = truth.month_ids[t]
        for k, task in enumerate(TASKS):
            cm = truth.data[t, k].astype(np.float64)
            cp = binarize(cm).astype(np.float64)
            reg_pred = summary.mean[t, k]
            cls_pred = np.clip(summary.mean[t, 3 + k], 0.0, 1.0)
            if baseline is not None:
                base_reg, base_cls = baseline[t, k], baseline[t, 3 + k]
            else:
                base_reg = base_cls = None
            values = {
                "mse": (
                    mse(reg_pred, cm, mask),
                    mse(base_reg, cm, mask) if base_reg is not None else math.nan,
                ),
                "ap": (
                    average_precision(cls_pred, cp, mask),
                    average_precision(base_cls, cp, mask) if base_cls is not None else math.nan,
                ),
                "auc": (
                    roc_auc(cls_pred, cp, mask),
                    roc_auc(base_cls, cp, mask) if base_cls is not None else math.nan,
                ),
                "brier": (
                    brier(cls_pred, cp, mask),
                    brier(base_cls, cp, mask) if base_cls is not None else math.nan,
                ),
            }
            for metric in METRIC_NAMES:
                m, b = values[metric]
                rows.append(EvalRow(month_id, task, metric, m, b))
    return EvalReport(rows, mask.name, mask.cell_count)
