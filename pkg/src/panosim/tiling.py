"""Variable-size tiling from per-cell efficiency scores.

Efficiency of a unit cell is the PSPNR gained per QP step between the worst
and best quality level, averaged over historical viewers. Cells are then
grouped into N rectangles by repeatedly splitting a rectangle in two along a
horizontal or vertical grid line, minimising the area-weighted variance of
the scores inside each rectangle.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .actions import frame_indices, frame_ratios, head_velocity
from .jnd import JndModel
from .pspnr import DEFAULT_CEILING_DB, pspnr_from_pmse, sampled_mean_pmse, tile_pmse
from .traces import UNIT_COLS, UNIT_ROWS, Rect, VideoDescriptor, ViewpointTrace

BRUTE_FORCE_MAX_GRID = (3, 4)
BRUTE_FORCE_MAX_N = 4


class TilingError(ValueError):
    pass


# --------------------------------------------------------------------------
# Efficiency scores
# --------------------------------------------------------------------------


def efficiency_scores(video: VideoDescriptor, traces: Sequence[ViewpointTrace],
                      model: JndModel = JndModel(), stride: int = 10,
                      ceiling: float = DEFAULT_CEILING_DB) -> np.ndarray:
    """(K, 12, 24) efficiency scores, clamped at 0.

    For each trace and chunk the PSPNR of every unit cell at the best and
    worst QP is computed from every ``stride``-th viewpoint sample in the
    chunk; the dB values are averaged over traces.
    """
    if not traces:
        raise TilingError("efficiency scores need at least one viewpoint trace")
    k_total = video.num_chunks
    dur = video.chunk_duration_s
    qps = video.quality_levels
    picks = [0, len(qps) - 1]
    out = np.zeros((k_total,) + video.unit_grid)
    velocities = [head_velocity(tr, causal=False) for tr in traces]
    for k in range(k_total):
        c = model.content_jnd(video.luminance[k], video.texture[k])
        err = video.error[k][..., picks]
        total = np.zeros(video.unit_grid + (2,))
        covered = 0
        for tr, vel in zip(traces, velocities):
            idx = frame_indices(tr, k * dur, (k + 1) * dur)
            if len(idx) == 0:
                continue

            def frame_pmse(i, tr=tr, vel=vel):
                a = frame_ratios(video, tr, [i], model, vel)[0]
                return tile_pmse(err, c[..., None], a[..., None])

            total += pspnr_from_pmse(sampled_mean_pmse(list(idx), stride, frame_pmse), ceiling)
            covered += 1
        if covered == 0:
            raise TilingError(f"no viewpoint trace covers chunk {k}")
        p = total / covered
        if qps[-1] != qps[0]:
            out[k] = np.maximum((p[..., 0] - p[..., 1]) / (qps[-1] - qps[0]), 0.0)
    return out


# --------------------------------------------------------------------------
# Partitions
# --------------------------------------------------------------------------


class _Moments:
    """Constant-time sum / sum-of-squares over rectangles."""

    def __init__(self, scores):
        x = np.asarray(scores, dtype=float)
        self.shape = x.shape
        self.s1 = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
        self.s2 = np.zeros_like(self.s1)
        self.s1[1:, 1:] = x.cumsum(0).cumsum(1)
        self.s2[1:, 1:] = (x * x).cumsum(0).cumsum(1)

    def _box(self, s, r0, c0, r1, c1):
        return s[r1, c1] - s[r0, c1] - s[r1, c0] + s[r0, c0]

    def cost(self, rect: Rect) -> float:
        """area * population variance."""
        r0, c0 = rect.row0, rect.col0
        r1, c1 = r0 + rect.rows, c0 + rect.cols
        a = self._box(self.s1, r0, c0, r1, c1)
        b = self._box(self.s2, r0, c0, r1, c1)
        return max(b - a * a / rect.area, 0.0)


def partition_cost(scores, rects: Sequence[Rect]) -> float:
    """Sum over rectangles of area times the population variance of their scores."""
    x = np.asarray(scores, dtype=float)
    total = 0.0
    for r in rects:
        block = x[r.row0 : r.row0 + r.rows, r.col0 : r.col0 + r.cols]
        total += block.size * float(block.var())
    return total


def check_partition(rects: Sequence[Rect], grid: tuple[int, int], n: int | None = None) -> None:
    rows, cols = grid
    cover = np.zeros(grid, dtype=int)
    for r in rects:
        if r.rows < 1 or r.cols < 1:
            raise TilingError(f"empty rectangle {r}")
        if r.row0 < 0 or r.col0 < 0 or r.row0 + r.rows > rows or r.col0 + r.cols > cols:
            raise TilingError(f"rectangle {r} outside {rows}x{cols} grid")
        cover[r.row0 : r.row0 + r.rows, r.col0 : r.col0 + r.cols] += 1
    if np.any(cover > 1):
        raise TilingError("rectangles overlap")
    if np.any(cover == 0):
        raise TilingError("rectangles do not cover the grid")
    if n is not None and len(rects) != n:
        raise TilingError(f"expected {n} rectangles, got {len(rects)}")


def _splits(rect: Rect):
    """Yield (axis, cut, a, b); axis 0 cuts along a horizontal line (separates rows)."""
    for cut in range(1, rect.rows):
        yield 0, rect.row0 + cut, Rect(rect.row0, rect.col0, cut, rect.cols), \
            Rect(rect.row0 + cut, rect.col0, rect.rows - cut, rect.cols)
    for cut in range(1, rect.cols):
        yield 1, rect.col0 + cut, Rect(rect.row0, rect.col0, rect.rows, cut), \
            Rect(rect.row0, rect.col0 + cut, rect.rows, rect.cols - cut)


def _best_split(mom: _Moments, rects: Sequence[Rect], tol: float):
    """Largest cost reduction; ties prefer the larger rectangle, a horizontal
    cut, then the smaller cut index."""
    best = None
    best_key = None
    for idx, rect in enumerate(rects):
        if rect.area < 2:
            continue
        base = mom.cost(rect)
        for axis, cut, a, b in _splits(rect):
            gain = base - mom.cost(a) - mom.cost(b)
            tie_key = (-rect.area, axis, cut, rect.row0, rect.col0)
            if best is None or gain > best[0] + tol or (abs(gain - best[0]) <= tol and tie_key < best_key):
                best, best_key = (gain, idx, a, b), tie_key
    return best


@dataclass(frozen=True)
class Grouping:
    rects: tuple[Rect, ...]
    cost: float


DEFAULT_BEAM = 32


def group_tiles(scores, n: int, beam: int = DEFAULT_BEAM) -> Grouping:
    """Split the score grid into exactly ``n`` rectangles, top-down.

    ``beam=1`` is plain greedy: each step applies the single split with the
    largest cost reduction. Wider beams keep the ``beam`` cheapest partial
    partitions at every step.
    """
    x = np.asarray(scores, dtype=float)
    if x.ndim != 2 or x.size == 0:
        raise TilingError("scores must be a non-empty 2-D grid")
    if not 1 <= n <= x.size:
        raise TilingError(f"n={n} outside [1, {x.size}]")
    if beam < 1:
        raise TilingError("beam width must be >= 1")
    mom = _Moments(x)
    whole = Rect(0, 0, x.shape[0], x.shape[1])
    tol = 1e-9 * max(1.0, mom.cost(whole))
    if beam == 1:
        rects = [whole]
        for _ in range(n - 1):
            gain, idx, a, b = _best_split(mom, rects, tol)
            rects[idx : idx + 1] = [a, b]
        return Grouping(tuple(rects), sum(mom.cost(r) for r in rects))

    split_cache: dict[Rect, list] = {}

    def splits_of(rect):
        if rect not in split_cache:
            base = mom.cost(rect)
            split_cache[rect] = [
                (base - mom.cost(a) - mom.cost(b), (-rect.area, axis, cut), a, b)
                for axis, cut, a, b in _splits(rect)
            ]
        return split_cache[rect]

    states = [((whole,), mom.cost(whole))]
    for _ in range(n - 1):
        cands = []
        for s_idx, (rects, cost) in enumerate(states):
            for r_idx, rect in enumerate(rects):
                if rect.area < 2:
                    continue
                for gain, key, a, b in splits_of(rect):
                    cands.append((round((cost - gain) / tol), s_idx, key, rect.row0, rect.col0, r_idx, a, b))
        cands.sort(key=lambda c: c[:5])
        seen = set()
        nxt = []
        for q, s_idx, _key, _r0, _c0, r_idx, a, b in cands:
            rects, cost = states[s_idx]
            child = rects[:r_idx] + (a, b) + rects[r_idx + 1 :]
            sig = frozenset(child)
            if sig in seen:
                continue
            seen.add(sig)
            nxt.append((child, q * tol))
            if len(nxt) == beam:
                break
        states = nxt
    rects = states[0][0]
    return Grouping(tuple(rects), sum(mom.cost(r) for r in rects))


def brute_force_guillotine(scores, n: int) -> Grouping:
    """Exact minimum-cost guillotine partition into ``n`` rectangles (small grids only)."""
    x = np.asarray(scores, dtype=float)
    rows, cols = x.shape
    max_r, max_c = BRUTE_FORCE_MAX_GRID
    if not ((rows <= max_r and cols <= max_c) or (rows <= max_c and cols <= max_r)):
        raise TilingError(f"brute force limited to {max_r}x{max_c} grids, got {rows}x{cols}")
    if not 1 <= n <= min(BRUTE_FORCE_MAX_N, x.size):
        raise TilingError(f"brute force limited to 1 <= n <= {BRUTE_FORCE_MAX_N}")
    mom = _Moments(x)

    @functools.lru_cache(maxsize=None)
    def best(rect: Rect, m: int):
        if m == 1:
            return mom.cost(rect), (rect,)
        if rect.area < m:
            return float("inf"), ()
        out = (float("inf"), ())
        for _axis, _cut, a, b in _splits(rect):
            for m1 in range(1, m):
                ca, pa = best(a, m1)
                cb, pb = best(b, m - m1)
                if ca + cb < out[0]:
                    out = (ca + cb, pa + pb)
        return out

    cost, rects = best(Rect(0, 0, rows, cols), n)
    return Grouping(rects, cost)


# --------------------------------------------------------------------------
# Per-chunk tilings
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Tiling:
    """Rectangles of unit cells for every chunk, all chunks with the same count."""

    grid: tuple[int, int]
    chunks: tuple[tuple[Rect, ...], ...]
    mean_gamma: tuple[tuple[float, ...], ...]
    static: bool = True

    def __post_init__(self):
        object.__setattr__(self, "chunks", tuple(tuple(Rect(*r) for r in rs) for rs in self.chunks))
        object.__setattr__(self, "mean_gamma", tuple(tuple(float(g) for g in gs) for gs in self.mean_gamma))
        if len(self.chunks) != len(self.mean_gamma):
            raise TilingError("mean_gamma must have one entry per chunk")
        counts = {len(rs) for rs in self.chunks}
        if len(counts) > 1:
            raise TilingError("every chunk must have the same number of tiles")
        for k, (rs, gs) in enumerate(zip(self.chunks, self.mean_gamma)):
            if len(gs) != len(rs):
                raise TilingError(f"chunk {k}: mean_gamma length mismatch")
            try:
                check_partition(rs, self.grid)
            except TilingError as exc:
                raise TilingError(f"chunk {k}: {exc}") from None

    @property
    def num_chunks(self) -> int:
        return len(self.chunks)

    @property
    def num_tiles(self) -> int:
        return len(self.chunks[0]) if self.chunks else 0

    def rects(self, k: int) -> tuple[Rect, ...]:
        return self.chunks[k]

    @functools.lru_cache(maxsize=None)
    def cell_map(self, k: int) -> np.ndarray:
        """(rows, cols) array of tile index per unit cell."""
        m = np.empty(self.grid, dtype=int)
        for i, r in enumerate(self.chunks[k]):
            m[r.row0 : r.row0 + r.rows, r.col0 : r.col0 + r.cols] = i
        m.setflags(write=False)
        return m

    def areas(self, k: int) -> np.ndarray:
        return np.array([r.area for r in self.chunks[k]], dtype=float)

    def __eq__(self, other):
        if not isinstance(other, Tiling):
            return NotImplemented
        return (self.grid, self.chunks, self.mean_gamma, self.static) == (
            other.grid, other.chunks, other.mean_gamma, other.static)

    __hash__ = object.__hash__


def _mean_gamma(scores, rects):
    return tuple(float(np.mean(scores[r.row0 : r.row0 + r.rows, r.col0 : r.col0 + r.cols])) for r in rects)


def build_tiling(scores, n: int = 30, static: bool = True, beam: int = DEFAULT_BEAM) -> Tiling:
    """Tiling for a (K, rows, cols) score stack.

    Static mode groups the chunk-averaged scores once and reuses the result
    for every chunk; otherwise each chunk is grouped on its own scores.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 3:
        raise TilingError("scores must be shaped (chunks, rows, cols)")
    grid = s.shape[1:]
    if s.shape[0] == 0:
        return Tiling(grid, (), (), static)
    if static:
        mean = s.mean(axis=0)
        rects = group_tiles(mean, n, beam).rects
        gam = _mean_gamma(mean, rects)
        return Tiling(grid, (rects,) * s.shape[0], (gam,) * s.shape[0], True)
    chunks, gammas = [], []
    for k in range(s.shape[0]):
        rects = group_tiles(s[k], n, beam).rects
        chunks.append(rects)
        gammas.append(_mean_gamma(s[k], rects))
    return Tiling(grid, tuple(chunks), tuple(gammas), False)


def uniform_tiling(num_chunks: int, tile_grid: tuple[int, int] = (UNIT_ROWS, UNIT_COLS),
                   unit_grid: tuple[int, int] = (UNIT_ROWS, UNIT_COLS)) -> Tiling:
    """Equal-size tiles, e.g. the 12x24 unit grid itself or a coarser 6x12 grid."""
    tr, tc = tile_grid
    ur, uc = unit_grid
    if ur % tr or uc % tc:
        raise TilingError(f"tile grid {tr}x{tc} does not divide the {ur}x{uc} unit grid")
    h, w = ur // tr, uc // tc
    rects = tuple(Rect(r * h, c * w, h, w) for r in range(tr) for c in range(tc))
    gam = (0.0,) * len(rects)
    return Tiling(unit_grid, (rects,) * num_chunks, (gam,) * num_chunks, True)


TILING_HEADER = ("chunk", "tile_id", "row0", "col0", "rows", "cols", "mean_gamma")


def save_tiling(tiling: Tiling, path) -> None:
    """CSV rows per tile; a static tiling is written once with chunk = -1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TILING_HEADER)
        chunks = [(-1, 0)] if tiling.static else [(k, k) for k in range(tiling.num_chunks)]
        if tiling.num_chunks == 0:
            chunks = []
        for label, k in chunks:
            for i, (r, g) in enumerate(zip(tiling.rects(k), tiling.mean_gamma[k])):
                w.writerow([label, i, r.row0, r.col0, r.rows, r.cols, repr(g)])


def load_tiling(path, num_chunks: int, grid: tuple[int, int] = (UNIT_ROWS, UNIT_COLS)) -> Tiling:
    rows_by_chunk: dict[int, list] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != list(TILING_HEADER):
            raise TilingError(f"{path}:1: header mismatch")
        for lineno, row in enumerate(reader, start=2):
            try:
                k, i, r0, c0, nr, nc = (int(v) for v in row[:6])
                g = float(row[6])
            except (ValueError, IndexError):
                raise TilingError(f"{path}:{lineno}: malformed row {row!r}") from None
            rows_by_chunk.setdefault(k, []).append((i, Rect(r0, c0, nr, nc), g))
    def ordered(entries):
        entries = sorted(entries)
        return tuple(e[1] for e in entries), tuple(e[2] for e in entries)
    if set(rows_by_chunk) == {-1}:
        rects, gam = ordered(rows_by_chunk[-1])
        return Tiling(grid, (rects,) * num_chunks, (gam,) * num_chunks, True)
    missing = set(range(num_chunks)) - set(rows_by_chunk)
    if missing:
        raise TilingError(f"{path}: no tiles for chunk {min(missing)}")
    pairs = [ordered(rows_by_chunk[k]) for k in range(num_chunks)]
    return Tiling(grid, tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), False)
