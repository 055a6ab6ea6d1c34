"""Client-side decisions: viewpoint prediction, action estimates, chunk
bitrate control and per-tile quality allocation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .actions import head_velocity
from .jnd import LUMINANCE_WINDOW_S
from .manifest import Manifest
from .traces import ViewpointTrace, cell_of, wrap_yaw

PREDICTION_WINDOW_S = 1.0
MAX_HORIZON_S = 3.0
ACTION_WINDOW_S = 2.0
VELOCITY_LAG = 5  # samples in the backward difference for head speed
MPC_HORIZON = 3
THROUGHPUT_WINDOW = 5
DEFAULT_TARGET_BUFFER_S = 2.0
DEFAULT_MAX_BUFFER_S = 10.0
LADDER_STEPS = 12


# --------------------------------------------------------------------------
# Viewpoint prediction
# --------------------------------------------------------------------------


def predict_viewpoint(times, yaw, pitch, horizon_s: float) -> tuple[float, float]:
    """Linear extrapolation of unwrapped yaw and pitch ``horizon_s`` past the
    last sample; with fewer than two samples the last one is held."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(yaw, dtype=float)
    p = np.asarray(pitch, dtype=float)
    if t.size == 0:
        raise ValueError("empty viewpoint history")
    if t.size < 2 or np.ptp(t) == 0:
        return float(wrap_yaw(y[-1])), float(np.clip(p[-1], -90.0, 90.0))
    uy = np.unwrap(y, period=360.0)
    ky, cy = np.polyfit(t - t[-1], uy, 1)
    kp, cp = np.polyfit(t - t[-1], p, 1)
    return float(wrap_yaw(cy + ky * horizon_s)), float(np.clip(cp + kp * horizon_s, -90.0, 90.0))


@dataclass(frozen=True)
class ViewpointPredictor:
    window_s: float = PREDICTION_WINDOW_S
    max_horizon_s: float = MAX_HORIZON_S

    def predict(self, trace: ViewpointTrace, now: float, target_time: float) -> tuple[float, float]:
        """Viewpoint at video time ``target_time`` from samples in ``(now - window, now]``."""
        hi = trace.index_at_or_before(now)
        lo = int(np.searchsorted(trace.times, trace.times[hi] - self.window_s - 1e-9, side="left"))
        lo = min(lo, hi)
        horizon = min(max(target_time - float(trace.times[hi]), 0.0), self.max_horizon_s)
        sl = slice(lo, hi + 1)
        return predict_viewpoint(trace.times[sl], trace.yaw[sl], trace.pitch[sl], horizon)


# --------------------------------------------------------------------------
# Action estimates
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ActionEstimate:
    """Per-tile factor estimates for one chunk, plus the resulting ratios."""

    rel_speed: np.ndarray
    luminance_change: np.ndarray
    dof_diff: np.ndarray
    ratio: np.ndarray
    window_s: float = ACTION_WINDOW_S


def speed_lower_bound(head_vel: np.ndarray, tile_vel: np.ndarray) -> np.ndarray:
    """Minimum over the window of |head - tile| velocity; (W, 2) x (N, 2) -> (N,)."""
    if len(head_vel) == 0:
        return np.zeros(len(tile_vel))
    rel = head_vel[:, None, :] - tile_vel[None, :, :]
    return np.hypot(rel[..., 0], rel[..., 1]).min(axis=0)


def _tile_at(manifest: Manifest, chunk: int, yaw: float, pitch: float) -> int:
    r, c = cell_of(yaw, pitch, manifest.tiling.grid)
    return int(manifest.tiling.cell_map(chunk)[r, c])


def estimate_action(trace: ViewpointTrace, now: float, chunk: int, manifest: Manifest,
                    predicted: tuple[float, float], window_s: float = ACTION_WINDOW_S,
                    velocity: np.ndarray | None = None) -> ActionEstimate:
    """Conservative per-tile factors for ``chunk`` given history up to ``now``.

    Speed is the smallest relative speed seen over the trailing window
    (causal head velocity against each tile's object velocity). Luminance
    change compares each tile with the focus tile five seconds before the
    chunk plays (or the latest known focus if that is still in the future);
    DoF difference compares each tile with the tile under the predicted
    viewpoint.
    """
    if velocity is None:
        velocity = head_velocity(trace, lag=VELOCITY_LAG, causal=True)
    hi = trace.index_at_or_before(now)
    lo = int(np.searchsorted(trace.times, trace.times[hi] - window_s - 1e-9, side="left"))
    head = velocity[min(lo, hi) : hi + 1]
    tile_vel = manifest.velocity[chunk].mean(axis=0)
    speed = speed_lower_bound(head, tile_vel)

    d = manifest.chunk_duration_s
    ref_t = min((chunk + 0.5) * d - LUMINANCE_WINDOW_S, now)
    j = trace.index_at_or_before(max(ref_t, trace.start))
    ref_chunk = min(max(int(math.floor(float(trace.times[j]) / d + 1e-9)), 0), manifest.num_chunks - 1)
    ref_lum = manifest.luminance[ref_chunk, _tile_at(manifest, ref_chunk, trace.yaw[j], trace.pitch[j])]
    lum = np.abs(manifest.luminance[chunk] - ref_lum)

    focus = _tile_at(manifest, chunk, *predicted)
    dof = np.abs(manifest.dof[chunk] - manifest.dof[chunk, focus])
    speed, lum, dof = (np.maximum(x, 0.0) for x in (speed, lum, dof))
    return ActionEstimate(speed, lum, dof, manifest.model.ratio(speed, lum, dof), window_s)


# --------------------------------------------------------------------------
# Chunk bitrate
# --------------------------------------------------------------------------


@dataclass
class BufferState:
    level_s: float = 0.0
    target_s: float = DEFAULT_TARGET_BUFFER_S
    playhead_chunk: int = 0
    max_s: float = DEFAULT_MAX_BUFFER_S

    def __post_init__(self):
        if self.level_s < 0 or self.target_s < 0 or self.max_s <= 0:
            raise ValueError("buffer levels must be non-negative")
        if self.level_s > self.max_s + 1e-9:
            raise ValueError(f"buffer level {self.level_s} exceeds max {self.max_s}")


def harmonic_mean(samples: Sequence[float]) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return 0.0
    if np.any(x <= 0):
        return 0.0
    return float(x.size / np.sum(1.0 / x))


def chunk_ladder(lowest_bps: float, highest_bps: float, steps: int = LADDER_STEPS) -> np.ndarray:
    """Geometric ladder of chunk bitrates between the all-lowest and all-highest totals."""
    if highest_bps <= lowest_bps or steps < 2:
        return np.array([lowest_bps])
    return np.geomspace(lowest_bps, highest_bps, steps)


def mpc_feasible(rate: float, level: float, target: float, throughput: float,
                 chunk_duration: float, horizon: int = MPC_HORIZON,
                 max_level: float = DEFAULT_MAX_BUFFER_S) -> bool:
    """No simulated rebuffering over the horizon, and the level never drops
    below ``min(target, previous level)``."""
    if throughput <= 0:
        return False
    for _ in range(horizon):
        dl = rate * chunk_duration / throughput
        if dl > level + 1e-12:
            return False
        nxt = min(level - dl + chunk_duration, max_level)
        if nxt < min(target, level) - 1e-12:
            return False
        level = nxt
    return True


def mpc_chunk_bitrate(buffer: BufferState, throughput_history: Sequence[float], ladder,
                      chunk_duration: float = 1.0, horizon: int = MPC_HORIZON,
                      window: int = THROUGHPUT_WINDOW) -> float:
    """Highest ladder rate the predicted throughput sustains, else the lowest.

    During startup (empty buffer) any rate would "rebuffer", so the check
    treats the first download as if one chunk were already buffered.
    """
    rates = np.sort(np.asarray(ladder, dtype=float))
    if rates.size == 0:
        raise ValueError("empty bitrate ladder")
    pred = harmonic_mean(list(throughput_history)[-window:])
    level = max(buffer.level_s, chunk_duration) if buffer.level_s <= 0 else buffer.level_s
    for rate in rates[::-1]:
        if mpc_feasible(rate, level, buffer.target_s, pred, chunk_duration, horizon, buffer.max_s):
            return float(rate)
    return float(rates[0])


# --------------------------------------------------------------------------
# Tile allocation
# --------------------------------------------------------------------------


def prune_dominated(points):
    """Drop points weakly dominated in (size, objective) with one strict
    inequality; exact ties keep the lexicographically smallest vector.

    ``points`` are ``(size, objective, vector)`` triples; survivors are
    returned sorted by size.
    """
    ordered = sorted(points, key=lambda p: (p[0], p[1], tuple(p[2])))
    out = []
    best = math.inf
    for p in ordered:
        if p[1] < best:
            out.append(p)
            best = p[1]
    return out


@dataclass(frozen=True)
class Allocation:
    levels: tuple[int, ...]
    objective: float
    size: float
    over_budget: bool = False


def _objective(weights, pmse, levels):
    return math.fsum(float(weights[t]) * float(pmse[t, q]) for t, q in enumerate(levels))


def _size(rates, levels):
    return math.fsum(float(rates[t, q]) for t, q in enumerate(levels))


def allocate_tiles(budget: float, weights, rates, pmse) -> Allocation:
    """Minimise sum(weights * pmse[t, q_t]) subject to sum(rates[t, q_t]) <= budget.

    ``rates`` and ``pmse`` are (N, Q). Exact: tiles are added one at a time
    in descending weight order, infeasible partial assignments are dropped and
    dominated ones pruned. Ties go to the smaller total size, then the
    lexicographically smallest level vector (index 0 = best quality).
    """
    w = np.asarray(weights, dtype=float)
    r = np.asarray(rates, dtype=float)
    m = np.asarray(pmse, dtype=float)
    n_tiles = len(w)
    if n_tiles == 0:
        return Allocation((), 0.0, 0.0, budget < 0)
    n_levels = r.shape[1]
    lowest = tuple(int(np.argmin(r[t])) for t in range(n_tiles))
    if _size(r, lowest) > budget:
        return Allocation(lowest, _objective(w, m, lowest), _size(r, lowest), True)

    order = sorted(range(n_tiles), key=lambda t: (-w[t], t))
    filler = n_levels  # sorts after every real level in partial vectors
    min_rest = np.concatenate([np.cumsum([r[t].min() for t in order][::-1])[::-1], [0.0]])
    frontier = [(0.0, 0.0, (filler,) * n_tiles)]
    for depth, t in enumerate(order):
        grown = []
        slack = budget - min_rest[depth + 1]
        for size, obj, vec in frontier:
            for q in range(n_levels):
                s = size + r[t, q]
                if s > slack + 1e-9 * max(1.0, abs(budget)):
                    continue
                v = vec[:t] + (q,) + vec[t + 1 :]
                grown.append((s, obj + w[t] * m[t, q], v))
        frontier = prune_dominated(grown)
    best = min(frontier, key=lambda p: (p[1], p[0], p[2]))
    levels = best[2]
    return Allocation(levels, _objective(w, m, levels), _size(r, levels), False)
