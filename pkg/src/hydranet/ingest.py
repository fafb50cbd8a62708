"""Grid-month event ingestion: transforms, volume assembly, partitioning, and file IO.

The pipeline starts from tabular per-cell fatality records, applies the
log-magnitude transform, and stacks the monthly grids into a 4-D volume
``[months, channels, height, width]`` that everything downstream consumes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

CHANNEL_NAMES = ("cm_sb", "cm_ns", "cm_os")
VIOLENCE_TYPES = ("sb", "ns", "os")
ROW_ORDERS = ("north_first", "south_first")

VOLUME_MAGIC = b"ZSTK1\n"
EVENT_HEADER = "row,col,month_id,sb,ns,os"


class ValidationError(ValueError):
    """Input data violates a documented precondition."""


class VolumeFormatError(ValueError):
    """The file is not a volume container (bad magic bytes)."""


class VolumeCorruptionError(ValueError):
    """The container is recognized but its payload is truncated or unreadable."""


class VolumeMetadataError(ValueError):
    """Container metadata is inconsistent with itself or with the payload."""


@dataclass(frozen=True)
class GridSpec:
    """Geometry and calendar anchor of the monthly grid.

    ``month0`` is the calendar (year, month) of month_id 0; month ids are plain
    0-based offsets from it, so any upstream id convention can be imported by
    shifting the anchor.
    """

    height: int = 180
    width: int = 180
    cell_size_deg: float = 0.5
    origin_lat: float = 40.0
    origin_lon: float = -19.0
    month0: tuple[int, int] = (1990, 1)
    row_order: str = "north_first"

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValidationError(f"grid dimensions must be positive, got {self.height}x{self.width}")
        if self.cell_size_deg <= 0:
            raise ValidationError(f"cell_size_deg must be positive, got {self.cell_size_deg}")
        year, month = self.month0
        if not 1 <= month <= 12:
            raise ValidationError(f"month0 calendar month must be in 1..12, got {month}")
        if self.row_order not in ROW_ORDERS:
            raise ValidationError(f"row_order must be one of {ROW_ORDERS}, got {self.row_order!r}")

    def month_to_calendar(self, month_id: int) -> tuple[int, int]:
        """Calendar (year, month) of a 0-based month id."""
        year, month = self.month0
        total = (year * 12 + (month - 1)) + month_id
        return total // 12, total % 12 + 1

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "cell_size_deg": self.cell_size_deg,
            "origin_lat": self.origin_lat,
            "origin_lon": self.origin_lon,
            "month0": list(self.month0),
            "row_order": self.row_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        d = dict(d)
        d["month0"] = tuple(d["month0"])
        return cls(**d)


@dataclass(frozen=True)
class EventRecord:
    """One grid cell in one month, with fatality counts per violence type."""

    row: int
    col: int
    month_id: int
    fatalities_sb: int = 0
    fatalities_ns: int = 0
    fatalities_os: int = 0

    def counts(self) -> tuple[int, int, int]:
        return (self.fatalities_sb, self.fatalities_ns, self.fatalities_os)


@dataclass(frozen=True)
class PartitionScheme:
    """A train/test split over an inclusive month-id range.

    The last ``test_months`` of the range are held out; everything before is
    training data.
    """

    name: str
    first_month_id: int
    last_month_id: int
    test_months: int = 36

    def __post_init__(self):
        if self.name not in ("calibration", "validation", "custom"):
            raise ValidationError(f"unknown partition name {self.name!r}")
        if self.test_months < 0:
            raise ValidationError("test_months must be >= 0")
        length = self.last_month_id - self.first_month_id + 1
        if length < self.test_months + 1:
            raise ValidationError(
                f"partition range of {length} months cannot hold {self.test_months} test months"
            )

    @classmethod
    def calibration(cls) -> "PartitionScheme":
        # 312 months (Jan 1990 .. Dec 2015 under the default calendar anchor)
        return cls("calibration", 0, 311, 36)

    @classmethod
    def validation(cls) -> "PartitionScheme":
        # 348 months (Jan 1990 .. Dec 2018 under the default calendar anchor)
        return cls("validation", 0, 347, 36)


@dataclass
class ZStackVolume:
    """Monthly grids stacked into a ``[T, C, H, W]`` float32 array plus metadata."""

    data: np.ndarray
    channel_names: tuple[str, ...] = CHANNEL_NAMES
    month_ids: list[int] = field(default_factory=list)
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        self.channel_names = tuple(self.channel_names)
        self.month_ids = [int(m) for m in self.month_ids]
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValidationError(f"volume data must be 4-D [T,C,H,W], got shape {self.data.shape}")
        t, c, h, w = self.data.shape
        if c != len(self.channel_names):
            raise ValidationError(
                f"channel axis has {c} entries but {len(self.channel_names)} channel names given"
            )
        if (h, w) != (self.grid.height, self.grid.width):
            raise ValidationError(
                f"spatial shape {h}x{w} does not match grid {self.grid.height}x{self.grid.width}"
            )
        if len(self.month_ids) != t:
            raise ValidationError(f"{t} months of data but {len(self.month_ids)} month ids")
        diffs = np.diff(self.month_ids)
        if len(diffs) and not np.all(diffs == 1):
            raise ValidationError("month_ids must be strictly increasing and contiguous")
        if t and not np.isfinite(self.data).all():
            raise ValidationError("volume contains non-finite values")
        if t and self.data.min() < 0:
            raise ValidationError("magnitude channels must be non-negative")

    @property
    def months(self) -> int:
        return self.data.shape[0]

    def select_months(self, first_month_id: int, last_month_id: int) -> "ZStackVolume":
        """Sub-volume over an inclusive month-id range (may be empty)."""
        if last_month_id < first_month_id:
            ids: list[int] = []
        else:
            ids = list(range(first_month_id, last_month_id + 1))
        if ids and (not self.month_ids or ids[0] < self.month_ids[0] or ids[-1] > self.month_ids[-1]):
            have = f"{self.month_ids[0]}..{self.month_ids[-1]}" if self.month_ids else "none"
            raise ValidationError(
                f"months {first_month_id}..{last_month_id} not contained in volume (have {have})"
            )
        if not ids:
            empty = np.zeros((0,) + self.data.shape[1:], dtype=np.float32)
            return ZStackVolume(empty, self.channel_names, [], self.grid)
        start = self.month_ids.index(ids[0])
        return ZStackVolume(
            self.data[start : start + len(ids)].copy(), self.channel_names, ids, self.grid
        )


def log_magnitude(fatalities):
    """Natural log of (count + 1); scalars or arrays.

    Counts must be non-negative integers. The transform is strictly increasing,
    maps 0 to 0, and compresses heavy-tailed counts into a training-friendly range.
    """
    arr = np.asarray(fatalities)
    if arr.size == 0:
        return np.zeros_like(arr, dtype=np.float64)
    if not np.issubdtype(arr.dtype, np.number) or np.issubdtype(arr.dtype, np.complexfloating):
        raise ValidationError(f"fatality counts must be numeric, got dtype {arr.dtype}")
    if np.issubdtype(arr.dtype, np.floating):
        if not np.isfinite(arr).all() or not np.all(arr == np.floor(arr)):
            bad = int(np.flatnonzero(~(np.isfinite(arr) & (arr == np.floor(arr))))[0])
            raise ValidationError(f"fatality count at flat index {bad} is not integral: {arr.ravel()[bad]}")
    if np.any(arr < 0):
        bad = int(np.flatnonzero(arr < 0)[0])
        raise ValidationError(f"fatality count at flat index {bad} is negative: {arr.ravel()[bad]}")
    out = np.log1p(arr.astype(np.float64))
    if np.isscalar(fatalities) or arr.ndim == 0:
        return float(out)
    return out


def binarize(magnitude):
    """Conflict presence: 1 where magnitude > 0, else 0; scalars or arrays."""
    arr = np.asarray(magnitude)
    if arr.size and np.any(arr < 0):
        bad = int(np.flatnonzero(arr < 0)[0])
        raise ValidationError(f"magnitude at flat index {bad} is negative: {arr.ravel()[bad]}")
    out = (arr > 0).astype(np.int64)
    if np.isscalar(magnitude) or arr.ndim == 0:
        return int(out)
    return out


def build_volume(
    events: list[EventRecord],
    grid: GridSpec,
    months: tuple[int, int],
) -> ZStackVolume:
    """Aggregate event records onto the grid and log-transform the counts.

    Duplicate (row, col, month) records are summed per violence type before the
    transform; absent cell-months are zero fatalities.
    """
    first, last = int(months[0]), int(months[1])
    if last < first:
        raise ValidationError(f"month range {first}..{last} is empty")
    t = last - first + 1
    counts = np.zeros((t, 3, grid.height, grid.width), dtype=np.int64)
    for idx, ev in enumerate(events):
        if not (0 <= ev.row < grid.height and 0 <= ev.col < grid.width):
            raise ValidationError(
                f"record {idx}: cell ({ev.row},{ev.col}) outside {grid.height}x{grid.width} grid"
            )
        if not (first <= ev.month_id <= last):
            raise ValidationError(
                f"record {idx}: month_id {ev.month_id} outside range {first}..{last}"
            )
        for ch, n in enumerate(ev.counts()):
            if not isinstance(n, (int, np.integer)):
                raise ValidationError(f"record {idx}: count {n!r} is not an integer")
            if n < 0:
                raise ValidationError(f"record {idx}: negative count {n}")
            counts[ev.month_id - first, ch, ev.row, ev.col] += n
    # int64 wraps negative long before any realistic overflow path completes
    if counts.size and counts.min() < 0:
        raise ValidationError("fatality count sum overflowed")
    data = np.log1p(counts.astype(np.float64)).astype(np.float32)
    return ZStackVolume(data, CHANNEL_NAMES, list(range(first, last + 1)), grid)


def partition(volume: ZStackVolume, scheme: PartitionScheme) -> tuple[ZStackVolume, ZStackVolume]:
    """Split a volume into (train, test) per the scheme's trailing hold-out."""
    if volume.months == 0:
        raise ValidationError("cannot partition an empty volume")
    if scheme.first_month_id < volume.month_ids[0] or scheme.last_month_id > volume.month_ids[-1]:
        raise ValidationError(
            f"scheme range {scheme.first_month_id}..{scheme.last_month_id} exceeds "
            f"volume months {volume.month_ids[0]}..{volume.month_ids[-1]}"
        )
    split = scheme.last_month_id - scheme.test_months
    train = volume.select_months(scheme.first_month_id, split)
    test = volume.select_months(split + 1, scheme.last_month_id)
    return train, test


# --- container format -------------------------------------------------------
#
# magic "ZSTK1\n" | uint64-LE metadata length | UTF-8 JSON metadata | raw array,
# little-endian float32, C order. Volumes are [T,C,H,W]; forecast cubes reuse the
# container with a leading sample axis (see forecasting.write_cube).


def _write_container(path, meta: dict, array: np.ndarray) -> None:
    payload = np.ascontiguousarray(array, dtype="<f4")
    meta = dict(meta)
    meta["shape"] = list(payload.shape)
    meta["dtype"] = "<f4"
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes(order="C"))


def _read_container(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(VOLUME_MAGIC))
        if magic != VOLUME_MAGIC:
            raise VolumeFormatError(f"{path}: bad magic bytes {magic!r}")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise VolumeCorruptionError(f"{path}: truncated metadata length field")
        (meta_len,) = struct.unpack("<Q", raw_len)
        blob = fh.read(meta_len)
        if len(blob) != meta_len:
            raise VolumeCorruptionError(f"{path}: truncated metadata block")
        try:
            meta = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise VolumeCorruptionError(f"{path}: unreadable metadata ({exc})") from exc
        payload = fh.read()
    try:
        shape = tuple(int(s) for s in meta["shape"])
        dtype = meta["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeMetadataError(f"{path}: metadata missing shape/dtype ({exc})") from exc
    if dtype != "<f4":
        raise VolumeMetadataError(f"{path}: unsupported dtype tag {dtype!r}")
    expected = int(np.prod(shape)) * 4 if shape else 4
    if len(payload) != expected:
        raise VolumeMetadataError(
            f"{path}: header shape {shape} implies {expected} payload bytes, found {len(payload)}"
        )
    array = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return meta, array


def serialize_volume(volume: ZStackVolume, path) -> None:
    """Write a volume to the ZSTK1 container format (bit-exact round trip)."""
    meta = {
        "container": "zstack",
        "version": 1,
        "channel_names": list(volume.channel_names),
        "month_ids": list(volume.month_ids),
        "grid": volume.grid.to_dict(),
    }
    _write_container(path, meta, volume.data)


def deserialize_volume(path) -> ZStackVolume:
    """Read a ZSTK1 volume; raises distinct errors for bad magic vs corruption."""
    meta, array = _read_container(path)
    if meta.get("container") != "zstack":
        raise VolumeMetadataError(f"{path}: container kind {meta.get('container')!r}, expected 'zstack'")
    if array.ndim != 4:
        raise VolumeMetadataError(f"{path}: expected 4-D volume payload, got shape {array.shape}")
    try:
        return ZStackVolume(
            array,
            tuple(meta["channel_names"]),
            list(meta["month_ids"]),
            GridSpec.from_dict(meta["grid"]),
        )
    except (KeyError, TypeError) as exc:
        raise VolumeMetadataError(f"{path}: incomplete metadata ({exc})") from exc
    except ValidationError as exc:
        raise VolumeMetadataError(f"{path}: metadata inconsistent with payload ({exc})") from exc


# --- event files ------------------------------------------------------------


def read_events(path) -> list[EventRecord]:
    """Parse the delimited event format (header ``row,col,month_id,sb,ns,os``).

    Lines starting with ``#`` are comments. Errors carry 1-based line numbers.
    """
    events: list[EventRecord] = []
    header_seen = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if not header_seen:
                if text != EVENT_HEADER:
                    raise ValidationError(
                        f"{path}:{lineno}: expected header {EVENT_HEADER!r}, got {text!r}"
                    )
                header_seen = True
                continue
            parts = text.split(",")
            if len(parts) != 6:
                raise ValidationError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                row, col, month_id, sb, ns, os_ = (int(p) for p in parts)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-integer field ({exc})") from exc
            if min(sb, ns, os_) < 0:
                raise ValidationError(f"{path}:{lineno}: negative fatality count")
            events.append(EventRecord(row, col, month_id, sb, ns, os_))
    if not header_seen:
        raise ValidationError(f"{path}: missing header line {EVENT_HEADER!r}")
    return events


def write_events(path, events: list[EventRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(EVENT_HEADER + "\n")
        for ev in events:
            fh.write(
                f"{ev.row},{ev.col},{ev.month_id},"
                f"{ev.fatalities_sb},{ev.fatalities_ns},{ev.fatalities_os}\n"
            )
