"""Input data: video descriptors, viewpoint and network traces, viewport geometry.

A :class:`VideoDescriptor` stands in for an encoded 360 video. It carries, for
every chunk and every cell of the fixed 12x24 unit-tile grid, the content
features the perception model needs and a rate/distortion ladder over the QP
levels.

Files are line-oriented CSV with a one-line header. The video descriptor also
has a JSON sidecar (same stem, ``.json``) for scalar metadata.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

UNIT_ROWS = 12
UNIT_COLS = 24
DEFAULT_QPS = (22, 27, 32, 37, 42)
DEFAULT_SAMPLE_PERIOD = 0.05

FEATURE_COLUMNS = ("vel_yaw", "vel_pitch", "luminance", "dof", "texture")


class DescriptorError(ValueError):
    """Raised for malformed descriptor files or violated descriptor invariants."""


class TraceError(ValueError):
    """Raised for malformed or inconsistent viewpoint/network traces."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# Video descriptor
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VideoDescriptor:
    """Per-chunk, per-unit-tile features and rate/distortion ladders.

    Array shapes (K chunks, 12 rows, 24 cols, Q levels):

    * ``velocity``: (K, 12, 24, 2) object velocity in deg/s (yaw, pitch)
    * ``luminance``, ``dof``, ``texture``: (K, 12, 24)
    * ``bitrate``, ``error``: (K, 12, 24, Q), bitrate in bps and mean
      absolute pixel error in gray levels for each QP in ``quality_levels``
    """

    quality_levels: tuple[int, ...]
    velocity: np.ndarray
    luminance: np.ndarray
    dof: np.ndarray
    texture: np.ndarray
    bitrate: np.ndarray
    error: np.ndarray
    chunk_duration_s: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "quality_levels", tuple(int(q) for q in self.quality_levels))
        object.__setattr__(self, "chunk_duration_s", float(self.chunk_duration_s))
        for name in ("velocity", "luminance", "dof", "texture", "bitrate", "error"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        self.validate()

    @property
    def num_chunks(self) -> int:
        return self.luminance.shape[0]

    @property
    def num_levels(self) -> int:
        return len(self.quality_levels)

    @property
    def unit_grid(self) -> tuple[int, int]:
        return UNIT_ROWS, UNIT_COLS

    @property
    def duration_s(self) -> float:
        return self.num_chunks * self.chunk_duration_s

    def validate(self) -> None:
        k = self.luminance.shape[0] if self.luminance.ndim == 3 else -1
        q = len(self.quality_levels)
        grid = (k, UNIT_ROWS, UNIT_COLS)
        if q < 1:
            raise DescriptorError("quality_levels is empty")
        if list(self.quality_levels) != sorted(set(self.quality_levels)):
            raise DescriptorError("quality_levels must be strictly increasing QPs")
        if self.chunk_duration_s <= 0:
            raise DescriptorError("chunk_duration_s must be positive")
        expected = {
            "velocity": grid + (2,),
            "luminance": grid,
            "dof": grid,
            "texture": grid,
            "bitrate": grid + (q,),
            "error": grid + (q,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DescriptorError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
            if not np.all(np.isfinite(getattr(self, name))):
                raise DescriptorError(f"{name} contains non-finite values")
        _check_range(self.luminance, "luminance", 0.0, 255.0)
        _check_range(self.texture, "texture", 0.0, 255.0)
        _check_range(self.dof, "dof", 0.0, math.inf)
        _check_range(self.error, "e", 0.0, 255.0)
        _check_range(self.bitrate, "R", 0.0, math.inf, low_open=True)
        if q > 1:
            # higher QP (later index) means lower rate and larger error
            bad = np.argwhere(np.diff(self.bitrate, axis=-1) >= 0)
            if bad.size:
                c, r, col, i = bad[0]
                raise DescriptorError(
                    f"chunk {c} tile ({r},{col}): R({self.quality_levels[i + 1]}) >= "
                    f"R({self.quality_levels[i]}); bitrate must strictly decrease with QP"
                )
            bad = np.argwhere(np.diff(self.error, axis=-1) <= 0)
            if bad.size:
                c, r, col, i = bad[0]
                raise DescriptorError(
                    f"chunk {c} tile ({r},{col}): e({self.quality_levels[i + 1]}) <= "
                    f"e({self.quality_levels[i]}); error must strictly increase with QP"
                )

    def __eq__(self, other):
        if not isinstance(other, VideoDescriptor):
            return NotImplemented
        return (
            self.quality_levels == other.quality_levels
            and self.chunk_duration_s == other.chunk_duration_s
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("velocity", "luminance", "dof", "texture", "bitrate", "error")
            )
        )

    __hash__ = None


def _check_range(arr, name, lo, hi, low_open=False):
    mask = (arr <= lo) if low_open else (arr < lo)
    mask |= arr > hi
    if np.any(mask):
        idx = tuple(int(i) for i in np.argwhere(mask)[0])
        chunk, row, col = idx[:3]
        bound = f"({lo}, {hi}]" if low_open else f"[{lo}, {hi}]"
        raise DescriptorError(
            f"chunk {chunk} tile ({row},{col}): {name}={arr[idx]!r} outside {bound}"
        )


def _csv_header(qps: Sequence[int]) -> list[str]:
    return (
        ["chunk", "row", "col", *FEATURE_COLUMNS]
        + [f"R_{q}" for q in qps]
        + [f"e_{q}" for q in qps]
    )


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_video_descriptor(video: VideoDescriptor, path) -> None:
    """Write ``video`` to ``path`` (CSV) plus a JSON sidecar next to it."""
    path = Path(path)
    qps = video.quality_levels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_csv_header(qps))
        for k in range(video.num_chunks):
            for r in range(UNIT_ROWS):
                for c in range(UNIT_COLS):
                    vy, vp = video.velocity[k, r, c]
                    row = [k, r, c, repr(float(vy)), repr(float(vp)),
                           repr(float(video.luminance[k, r, c])),
                           repr(float(video.dof[k, r, c])),
                           repr(float(video.texture[k, r, c]))]
                    row += [repr(float(x)) for x in video.bitrate[k, r, c]]
                    row += [repr(float(x)) for x in video.error[k, r, c]]
                    w.writerow(row)
    meta = {
        "chunk_duration_s": video.chunk_duration_s,
        "num_chunks": video.num_chunks,
        "quality_levels": list(qps),
        "unit_grid": [UNIT_ROWS, UNIT_COLS],
        **({"meta": video.meta} if video.meta else {}),
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_video_descriptor(path) -> VideoDescriptor:
    """Load a descriptor written by :func:`save_video_descriptor`."""
    path = Path(path)
    side = _sidecar(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError:
        raise DescriptorError(f"{side}: missing metadata sidecar") from None
    except json.JSONDecodeError as exc:
        raise DescriptorError(f"{side}: line {exc.lineno}: {exc.msg}") from None
    try:
        qps = tuple(int(q) for q in meta["quality_levels"])
        num_chunks = int(meta["num_chunks"])
        chunk_duration = float(meta.get("chunk_duration_s", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise DescriptorError(f"{side}: bad metadata field: {exc}") from None
    if tuple(meta.get("unit_grid", (UNIT_ROWS, UNIT_COLS))) != (UNIT_ROWS, UNIT_COLS):
        raise DescriptorError(f"{side}: unit_grid must be {UNIT_ROWS}x{UNIT_COLS}")

    q = len(qps)
    shape = (num_chunks, UNIT_ROWS, UNIT_COLS)
    vel = np.zeros(shape + (2,))
    lum, dof, tex = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    rate, err = np.zeros(shape + (q,)), np.zeros(shape + (q,))
    seen = np.zeros(shape, dtype=bool)
    header = _csv_header(qps)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise DescriptorError(f"{path}:1: header mismatch, expected {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DescriptorError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            vals = []
            for name, raw in zip(header, row):
                try:
                    vals.append(int(raw) if name in ("chunk", "row", "col") else float(raw))
                except ValueError:
                    raise DescriptorError(
                        f"{path}:{lineno}: field {name!r}: cannot parse {raw!r}"
                    ) from None
            k, r, c = vals[:3]
            if not (0 <= k < num_chunks and 0 <= r < UNIT_ROWS and 0 <= c < UNIT_COLS):
                raise DescriptorError(f"{path}:{lineno}: index ({k},{r},{c}) out of range")
            if seen[k, r, c]:
                raise DescriptorError(f"{path}:{lineno}: duplicate record for chunk {k} tile ({r},{c})")
            seen[k, r, c] = True
            vel[k, r, c] = vals[3:5]
            lum[k, r, c], dof[k, r, c], tex[k, r, c] = vals[5:8]
            rate[k, r, c] = vals[8 : 8 + q]
            err[k, r, c] = vals[8 + q : 8 + 2 * q]
    if not seen.all():
        k, r, c = np.argwhere(~seen)[0]
        raise DescriptorError(f"{path}: chunk {k} is missing tile ({r},{c})")
    return VideoDescriptor(
        quality_levels=qps, velocity=vel, luminance=lum, dof=dof, texture=tex,
        bitrate=rate, error=err, chunk_duration_s=chunk_duration,
        meta=dict(meta.get("meta", {})),
    )


# --------------------------------------------------------------------------
# Traces
# --------------------------------------------------------------------------


def wrap_yaw(yaw):
    """Map yaw angles into [0, 360)."""
    out = np.mod(yaw, 360.0)
    # np.mod can return 360.0 for tiny negative inputs
    out = np.where(out >= 360.0, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def yaw_delta(a, b):
    """Signed shorter-arc difference ``b - a`` in [-180, 180]; exactly 180 stays +180."""
    d = np.mod(np.asarray(b, dtype=float) - np.asarray(a, dtype=float), 360.0)
    d = np.where(d > 180.0, d - 360.0, d)
    return float(d) if np.ndim(d) == 0 else d


@dataclass(frozen=True, eq=False)
class ViewpointTrace:
    """Head-orientation samples on a uniform time grid."""

    times: np.ndarray
    yaw: np.ndarray
    pitch: np.ndarray

    def __post_init__(self):
        t = _frozen(self.times)
        yaw = _frozen(wrap_yaw(np.asarray(self.yaw, dtype=float)))
        pitch = _frozen(self.pitch)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "yaw", yaw)
        object.__setattr__(self, "pitch", pitch)
        if not (t.ndim == yaw.ndim == pitch.ndim == 1 and len(t) == len(yaw) == len(pitch)):
            raise TraceError("times, yaw and pitch must be 1-D arrays of equal length")
        if len(t) < 1:
            raise TraceError("viewpoint trace is empty")
        if np.any(np.abs(pitch) > 90.0):
            i = int(np.argmax(np.abs(pitch) > 90.0))
            raise TraceError(f"sample {i}: pitch {pitch[i]} outside [-90, 90]")
        if len(t) > 1:
            dt = np.diff(t)
            if np.any(dt <= 0):
                raise TraceError("viewpoint timestamps must be strictly increasing")
            if np.max(np.abs(dt - dt[0])) > 1e-6 * max(1.0, abs(dt[0])) + 1e-9:
                raise TraceError("viewpoint samples must be uniformly spaced")

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, float, float]]) -> "ViewpointTrace":
        arr = np.asarray(list(samples), dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    @property
    def sample_period_s(self) -> float:
        if len(self.times) < 2:
            return DEFAULT_SAMPLE_PERIOD
        return float((self.times[-1] - self.times[0]) / (len(self.times) - 1))

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)

    def unwrapped_yaw(self) -> np.ndarray:
        """Yaw made continuous by accumulating shorter-arc steps."""
        steps = yaw_delta(self.yaw[:-1], self.yaw[1:]) if len(self.yaw) > 1 else np.zeros(0)
        return self.yaw[0] + np.concatenate([[0.0], np.cumsum(steps)])

    def index_at_or_before(self, t: float) -> int:
        return int(np.searchsorted(self.times, t + 1e-9, side="right") - 1)

    def __eq__(self, other):
        if not isinstance(other, ViewpointTrace):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("times", "yaw", "pitch"))

    __hash__ = None


def viewpoint_at(trace: ViewpointTrace, t: float) -> tuple[float, float]:
    """Viewpoint at time ``t`` by linear interpolation; yaw follows the shorter arc."""
    times = trace.times
    if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
        raise TraceError(f"t={t} outside trace span [{times[0]}, {times[-1]}]")
    i = int(np.searchsorted(times, t, side="right") - 1)
    i = min(max(i, 0), len(times) - 1)
    if i == len(times) - 1 or t <= times[i]:
        return float(trace.yaw[i]), float(trace.pitch[i])
    frac = (t - times[i]) / (times[i + 1] - times[i])
    yaw = trace.yaw[i] + frac * yaw_delta(trace.yaw[i], trace.yaw[i + 1])
    pitch = trace.pitch[i] + frac * (trace.pitch[i + 1] - trace.pitch[i])
    return float(wrap_yaw(yaw)), float(pitch)


@dataclass(frozen=True, eq=False)
class NetworkTrace:
    """Link throughput, piecewise constant from each sample to the next.

    The last sample holds for one more sample interval; that end point is the
    trace ``period``. Sessions running longer than the trace replay it from
    the start. Zero throughput is accepted to model outages.
    """

    times: np.ndarray
    throughput_bps: np.ndarray

    def __post_init__(self):
        t = _frozen(self.times)
        bw = _frozen(self.throughput_bps)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "throughput_bps", bw)
        if t.ndim != 1 or t.shape != bw.shape or len(t) == 0:
            raise TraceError("times and throughput must be non-empty 1-D arrays of equal length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise TraceError("network timestamps must be strictly increasing")
        if np.any(bw < 0) or not np.all(np.isfinite(bw)):
            raise TraceError("throughput must be finite and non-negative")

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, float]]) -> "NetworkTrace":
        arr = np.asarray(list(samples), dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def period(self) -> float:
        last = self.times[-1] - self.times[-2] if len(self.times) > 1 else 1.0
        return float(self.times[-1] + last - self.times[0])

    def mean_bps(self) -> float:
        edges = np.append(self.times, self.times[0] + self.period)
        return float(np.sum(self.throughput_bps * np.diff(edges)) / self.period)

    def __eq__(self, other):
        if not isinstance(other, NetworkTrace):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(
            self.throughput_bps, other.throughput_bps
        )

    __hash__ = None


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def _read_rows(path, header):
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != list(header):
            raise TraceError(f"{path}:1: header mismatch, expected {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise TraceError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                out.append([float(x) for x in row])
            except ValueError:
                raise TraceError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
    return np.asarray(out, dtype=float).reshape(-1, len(header))


VIEWPOINT_HEADER = ("time_s", "yaw_deg", "pitch_deg")
NETWORK_HEADER = ("time_s", "throughput_bps")


def save_viewpoint_trace(trace: ViewpointTrace, path) -> None:
    _write_rows(path, VIEWPOINT_HEADER, zip(trace.times, trace.yaw, trace.pitch))


def load_viewpoint_trace(path) -> ViewpointTrace:
    arr = _read_rows(path, VIEWPOINT_HEADER)
    try:
        return ViewpointTrace(arr[:, 0], arr[:, 1], arr[:, 2])
    except TraceError as exc:
        raise TraceError(f"{path}: {exc}") from None


def save_network_trace(trace: NetworkTrace, path) -> None:
    _write_rows(path, NETWORK_HEADER, zip(trace.times, trace.throughput_bps))


def load_network_trace(path) -> NetworkTrace:
    arr = _read_rows(path, NETWORK_HEADER)
    try:
        return NetworkTrace(arr[:, 0], arr[:, 1])
    except TraceError as exc:
        raise TraceError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# Viewport geometry
# --------------------------------------------------------------------------


class Rect(NamedTuple):
    """Axis-aligned block of unit cells: top-left (row0, col0) and its extent."""

    row0: int
    col0: int
    rows: int
    cols: int

    @property
    def area(self) -> int:
        return self.rows * self.cols

    def cells(self):
        return [(r, c) for r in range(self.row0, self.row0 + self.rows)
                for c in range(self.col0, self.col0 + self.cols)]


@dataclass(frozen=True)
class Viewport:
    yaw: float
    pitch: float
    width_deg: float = 110.0
    height_deg: float = 90.0

    def __post_init__(self):
        if not 0 < self.width_deg <= 360:
            raise ValueError(f"viewport width {self.width_deg} outside (0, 360]")
        if not 0 < self.height_deg <= 180:
            raise ValueError(f"viewport height {self.height_deg} outside (0, 180]")

    @property
    def center(self) -> tuple[float, float]:
        return self.yaw, self.pitch


def _yaw_overlap(lo, hi, vp: Viewport):
    """Boolean array: does [lo, hi) (deg yaw, within [0,360]) meet the viewport's yaw span?"""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if vp.width_deg >= 360.0:
        return np.ones(lo.shape, dtype=bool)
    c = float(wrap_yaw(vp.yaw))
    a, b = c - vp.width_deg / 2.0, c + vp.width_deg / 2.0
    hit = np.zeros(lo.shape, dtype=bool)
    for shift in (-360.0, 0.0, 360.0):
        hit |= (lo < b + shift) & (a + shift < hi)
    return hit


def _pitch_overlap(top, bottom, vp: Viewport):
    """Rows span pitch (bottom, top]; viewport pitch span is clipped to the poles."""
    top = np.asarray(top, dtype=float)
    bottom = np.asarray(bottom, dtype=float)
    a = max(-90.0, vp.pitch - vp.height_deg / 2.0)
    b = min(90.0, vp.pitch + vp.height_deg / 2.0)
    return (bottom < b) & (a < top)


def cell_viewport_mask(vp: Viewport, grid: tuple[int, int] = (UNIT_ROWS, UNIT_COLS)) -> np.ndarray:
    """(rows, cols) boolean mask of grid cells intersecting the viewport."""
    rows, cols = grid
    cw, rh = 360.0 / cols, 180.0 / rows
    col_lo = np.arange(cols) * cw
    row_top = 90.0 - np.arange(rows) * rh
    return np.outer(_pitch_overlap(row_top, row_top - rh, vp), _yaw_overlap(col_lo, col_lo + cw, vp))


def tiles_in_viewport(vp: Viewport, rects: Sequence[Rect],
                      grid: tuple[int, int] = (UNIT_ROWS, UNIT_COLS)) -> set[int]:
    """Indices of tiles whose angular rectangle intersects the viewport (yaw wrapped)."""
    rows, cols = grid
    cw, rh = 360.0 / cols, 180.0 / rows
    if not rects:
        return set()
    r = np.asarray(rects, dtype=float)
    yaw_hit = _yaw_overlap(r[:, 1] * cw, (r[:, 1] + r[:, 3]) * cw, vp)
    top = 90.0 - r[:, 0] * rh
    pitch_hit = _pitch_overlap(top, top - r[:, 2] * rh, vp)
    return {int(i) for i in np.flatnonzero(yaw_hit & pitch_hit)}


def cell_of(yaw: float, pitch: float, grid: tuple[int, int] = (UNIT_ROWS, UNIT_COLS)) -> tuple[int, int]:
    """Grid cell containing a viewpoint."""
    rows, cols = grid
    col = int(wrap_yaw(yaw) // (360.0 / cols)) % cols
    row = int((90.0 - pitch) // (180.0 / rows))
    return min(max(row, 0), rows - 1), col


def cell_centers(grid: tuple[int, int] = (UNIT_ROWS, UNIT_COLS)) -> tuple[np.ndarray, np.ndarray]:
    """(yaw, pitch) of cell centers, each shaped (rows, cols)."""
    rows, cols = grid
    yaw = (np.arange(cols) + 0.5) * 360.0 / cols
    pitch = 90.0 - (np.arange(rows) + 0.5) * 180.0 / rows
    return np.broadcast_to(yaw, (rows, cols)), np.broadcast_to(pitch[:, None], (rows, cols))
