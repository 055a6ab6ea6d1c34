"""Trace-driven playback sessions and scheme comparisons.

One session downloads chunks back to back over a fluid-flow link. The
scheme picks a quality per tile; playback of a chunk waits until every tile
the viewer actually looks at during that chunk has arrived. Quality is scored
afterwards with the real viewpoint, never the predicted one.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .actions import frame_factors, frame_indices, head_velocity
from .adaptation import (
    DEFAULT_MAX_BUFFER_S,
    DEFAULT_TARGET_BUFFER_S,
    VELOCITY_LAG,
    BufferState,
    ViewpointPredictor,
    allocate_tiles,
    chunk_ladder,
    estimate_action,
    mpc_chunk_bitrate,
)
from .jnd import JndModel
from .manifest import Manifest
from .pspnr import DEFAULT_CEILING_DB, pmse_from_pspnr, pspnr_from_pmse, tile_pmse
from .tiling import Tiling, uniform_tiling
from .traces import (
    UNIT_COLS,
    UNIT_ROWS,
    NetworkTrace,
    TraceError,
    VideoDescriptor,
    Viewport,
    ViewpointTrace,
    cell_viewport_mask,
    yaw_delta,
)

SCHEMES = ("pano", "viewport_uniform", "whole_sphere")
DEFAULT_STALL_CAP_S = 60.0
BANDWIDTH_MATCH = 0.01
PSPNR_MATCH_DB = 0.5


# --------------------------------------------------------------------------
# Quality scale
# --------------------------------------------------------------------------

MOS_BANDS = ((70.0, 5), (62.0, 4), (54.0, 3), (46.0, 2))


def mos_from_pspnr(p: float) -> int:
    """Opinion score for a PSPNR; values between two bands take the lower one."""
    if not math.isfinite(p):
        raise ValueError("PSPNR must be finite")
    for lo, score in MOS_BANDS:
        if p >= lo:
            return score
    return 1


# --------------------------------------------------------------------------
# Link
# --------------------------------------------------------------------------


class Link:
    """Fluid transfer over a looping piecewise-constant throughput trace."""

    def __init__(self, trace: NetworkTrace):
        self.t0 = float(trace.times[0])
        self.period = trace.period
        ends = np.append(trace.times, trace.times[0] + self.period) - self.t0
        self.edges = ends
        self.rates = trace.throughput_bps.astype(float)
        self.cum = np.concatenate([[0.0], np.cumsum(self.rates * np.diff(ends))])
        self.per_period = float(self.cum[-1])

    def delivered(self, t: float) -> float:
        """Bits delivered from the trace start up to time ``t``."""
        n, phase = divmod(t - self.t0, self.period)
        i = min(int(np.searchsorted(self.edges, phase, side="right") - 1), len(self.rates) - 1)
        return n * self.per_period + self.cum[i] + self.rates[i] * (phase - self.edges[i])

    def finish_time(self, start: float, bits: float) -> float:
        if bits <= 0:
            return start
        if self.per_period <= 0:
            return math.inf
        target = self.delivered(start) + bits
        n, rem = divmod(target, self.per_period)
        if rem <= 0 and n > 0:
            n, rem = n - 1, self.per_period
        j = int(np.searchsorted(self.cum, rem, side="left"))
        if self.cum[j] == rem:
            phase = self.edges[j]
        else:
            phase = self.edges[j - 1] + (rem - self.cum[j - 1]) / self.rates[j - 1]
        return max(self.t0 + n * self.period + phase, start)


# --------------------------------------------------------------------------
# Schemes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Scheme:
    name: str
    target_buffer_s: float = DEFAULT_TARGET_BUFFER_S
    baseline_grid: tuple[int, int] = (UNIT_ROWS, UNIT_COLS)
    bitrate_cap_bps: float | None = None

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ValueError(f"unknown scheme {self.name!r}; choose from {SCHEMES}")
        if self.target_buffer_s < 0:
            raise ValueError("target buffer must be non-negative")

    def capped(self, cap: float | None) -> "Scheme":
        return replace(self, bitrate_cap_bps=cap)


@dataclass(frozen=True)
class ChunkRecord:
    chunk: int
    budget_bps: float
    bitrate_bps: float
    levels: tuple[int, ...]
    est_ratio: tuple[float, ...]
    predicted: tuple[float, float]
    actual: tuple[float, float]
    download_start: float
    download_end: float
    ready: float
    stall_s: float
    pspnr_db: float
    sphere_pspnr_db: float
    over_budget: bool = False


@dataclass(frozen=True)
class SessionResult:
    scheme: str
    chunks: tuple[ChunkRecord, ...]
    pspnr_db: float
    sphere_pspnr_db: float
    buffering_ratio: float
    bandwidth_bps: float
    mos: int
    stall_s: float
    playback_s: float
    aborted: bool = False
    label: str = ""

    @property
    def session_s(self) -> float:
        return self.stall_s + self.playback_s


def _tile_rates(video: VideoDescriptor, tiling: Tiling, k: int) -> np.ndarray:
    member = tiling.cell_map(k).reshape(-1)
    rates = video.bitrate[k].reshape(-1, video.num_levels)
    out = np.zeros((tiling.num_tiles, video.num_levels))
    np.add.at(out, member, rates)
    return out


def _tile_centers(tiling: Tiling, k: int):
    rows, cols = tiling.grid
    rects = np.asarray(tiling.rects(k), dtype=float)
    yaw = (rects[:, 1] + rects[:, 3] / 2.0) * 360.0 / cols
    pitch = 90.0 - (rects[:, 0] + rects[:, 2] / 2.0) * 180.0 / rows
    return yaw, pitch


def _distance(yaw, pitch, center):
    return np.hypot(yaw_delta(center[0], yaw), pitch - center[1])


def _uniform_fit(rates, members, fixed_bits, budget):
    """Best single level for ``members`` that fits beside ``fixed_bits``; None if none fits."""
    for q in range(rates.shape[1]):
        if rates[members, q].sum() + fixed_bits <= budget:
            return q
    return None


def decide_viewport_uniform(rates, in_vp, order, budget):
    n_tiles, n_levels = rates.shape
    low = n_levels - 1
    levels = np.full(n_tiles, low)
    inside = np.flatnonzero(in_vp)
    outside_bits = rates[~in_vp, low].sum()
    q = _uniform_fit(rates, inside, outside_bits, budget)
    if q is None:
        return levels, rates[np.arange(n_tiles), levels].sum() > budget
    levels[inside] = q
    spent = rates[np.arange(n_tiles), levels].sum()
    # spend what is left on tiles nearest the predicted center, one level at a time
    changed = True
    while changed:
        changed = False
        for t in order:
            if not in_vp[t] or levels[t] == 0:
                continue
            extra = rates[t, levels[t] - 1] - rates[t, levels[t]]
            if spent + extra <= budget:
                levels[t] -= 1
                spent += extra
                changed = True
    return levels, False


def decide_whole_sphere(rates, budget):
    n_tiles, n_levels = rates.shape
    q = _uniform_fit(rates, np.arange(n_tiles), 0.0, budget)
    if q is None:
        return np.full(n_tiles, n_levels - 1), True
    return np.full(n_tiles, q), False


def decide_pano(manifest: Manifest, k: int, est_ratio, weights, budget):
    """Viewport tiles go through the exact allocation; the rest get the lowest level."""
    rates = manifest.bitrate[k]
    n_tiles, n_levels = rates.shape
    low = n_levels - 1
    levels = np.full(n_tiles, low)
    inside = np.flatnonzero(weights > 0)
    if inside.size == 0:
        return levels, rates[:, low].sum() > budget
    p = manifest.pspnr(k, inside[:, None], np.arange(n_levels)[None, :], est_ratio[inside][:, None])
    m = pmse_from_pspnr(p, manifest.table.ceiling)
    rest = budget - rates[weights == 0, low].sum()
    alloc = allocate_tiles(rest, weights[inside], rates[inside], m)
    levels[inside] = alloc.levels
    return levels, alloc.over_budget


# --------------------------------------------------------------------------
# Sessions
# --------------------------------------------------------------------------


def _check_coverage(video: VideoDescriptor, viewpoint: ViewpointTrace):
    need = video.duration_s - viewpoint.sample_period_s
    if viewpoint.start > 1e-9 or viewpoint.end < need - 1e-9:
        raise TraceError(
            f"viewpoint trace spans [{viewpoint.start}, {viewpoint.end}] s but the video "
            f"lasts {video.duration_s} s")


def ground_truth(video: VideoDescriptor, viewpoint: ViewpointTrace, tiling: Tiling, k: int,
                 levels, model: JndModel, true_velocity, viewport_size=(110.0, 90.0),
                 ceiling: float = DEFAULT_CEILING_DB):
    """(viewport PSPNR, full-sphere PSPNR, actual-viewport cell mask) for chunk ``k``.

    Every viewpoint sample in the chunk contributes one frame.
    """
    d = video.chunk_duration_s
    idx = frame_indices(viewpoint, k * d, (k + 1) * d)
    if idx.size == 0:
        idx = np.array([viewpoint.index_at_or_before(k * d)])
    speed, lum, dof = frame_factors(video, viewpoint, idx, true_velocity)
    ratio = model.ratio(speed, lum, dof)
    tile_of = tiling.cell_map(k)
    level = np.asarray(levels)[tile_of]
    err = np.take_along_axis(video.error[k], level[..., None], axis=-1)[..., 0]
    c = model.content_jnd(video.luminance[k], video.texture[k])
    pm = tile_pmse(err[None], c[None], ratio)
    masks = np.stack([cell_viewport_mask(Viewport(viewpoint.yaw[i], viewpoint.pitch[i], *viewport_size),
                                         tiling.grid) for i in idx])
    vp = np.array([pm[f][masks[f]].mean() for f in range(len(idx))])
    sphere = pm.reshape(len(idx), -1).mean(axis=1)
    return (pspnr_from_pmse(float(vp.mean()), ceiling), pspnr_from_pmse(float(sphere.mean()), ceiling),
            masks.any(axis=0))


def run_session(video: VideoDescriptor, viewpoint: ViewpointTrace, network: NetworkTrace,
                scheme: Scheme, manifest: Manifest | None = None, seed: int = 0,
                model: JndModel | None = None, max_buffer_s: float = DEFAULT_MAX_BUFFER_S,
                stall_cap_s: float = DEFAULT_STALL_CAP_S, viewport_size=(110.0, 90.0),
                label: str = "") -> SessionResult:
    """Play ``video`` for one viewer over one link.

    ``seed`` is accepted for interface stability; the session itself has no
    random elements, so equal inputs always give equal results.
    """
    _check_coverage(video, viewpoint)
    if scheme.name == "pano":
        if manifest is None:
            raise ValueError("the pano scheme needs a manifest")
        if manifest.num_chunks != video.num_chunks:
            raise ValueError("manifest and video disagree on the chunk count")
        tiling = manifest.tiling
        model = model or manifest.model
    else:
        tiling = uniform_tiling(video.num_chunks, scheme.baseline_grid)
        model = model or JndModel()
    del seed
    d = video.chunk_duration_s
    n_chunks = video.num_chunks
    link = Link(network)
    predictor = ViewpointPredictor()
    causal_vel = head_velocity(viewpoint, lag=VELOCITY_LAG, causal=True)
    true_vel = head_velocity(viewpoint, causal=False)
    play_start: list[float] = []
    records: list[ChunkRecord] = []
    throughput: list[float] = []
    t = 0.0
    stall_total = 0.0
    aborted = False
    total_bits = 0.0

    def played(now: float) -> float:
        return sum(min(max(now - s, 0.0), d) for s in play_start)

    def time_when_played(x: float) -> float:
        j = min(int(math.floor(x / d + 1e-9)), len(play_start) - 1)
        return play_start[j] + (x - j * d)

    for k in range(n_chunks):
        level = k * d - played(t)
        if level + d > max_buffer_s + 1e-9:
            t = max(t, time_when_played(k * d + d - max_buffer_s))
            level = k * d - played(t)
        now = min(played(t), viewpoint.end)
        pred = predictor.predict(viewpoint, now, (k + 0.5) * d)
        if scheme.name == "pano":
            rates = manifest.bitrate[k]
        else:
            rates = _tile_rates(video, tiling, k)
        n_tiles, n_levels = rates.shape
        ladder = chunk_ladder(rates[:, -1].sum(), rates[:, 0].sum())
        buf = BufferState(max(level, 0.0), scheme.target_buffer_s, k, max_buffer_s)
        budget = mpc_chunk_bitrate(buf, throughput, ladder, d)
        if scheme.bitrate_cap_bps is not None:
            budget = min(budget, scheme.bitrate_cap_bps)

        pred_mask = cell_viewport_mask(Viewport(pred[0], pred[1], *viewport_size), tiling.grid)
        tile_of = tiling.cell_map(k)
        weights = np.bincount(tile_of[pred_mask], minlength=n_tiles).astype(float)
        cy, cp = _tile_centers(tiling, k)
        dist = _distance(cy, cp, pred)
        order = sorted(range(n_tiles), key=lambda i: (weights[i] == 0, dist[i], i))
        est = ()
        if scheme.name == "pano":
            ae = estimate_action(viewpoint, now, k, manifest, pred, velocity=causal_vel)
            levels, over = decide_pano(manifest, k, ae.ratio, weights, budget)
            est = tuple(float(x) for x in ae.ratio)
        elif scheme.name == "viewport_uniform":
            levels, over = decide_viewport_uniform(rates, weights > 0, order, budget)
        else:
            levels, over = decide_whole_sphere(rates, budget)

        bits = rates[np.arange(n_tiles), levels] * d
        done = np.empty(n_tiles)
        cur = t
        for i in order:
            cur = link.finish_time(cur, float(bits[i]))
            done[i] = cur
        chunk_bits = float(bits.sum())
        if math.isfinite(cur) and cur > t:
            throughput.append(chunk_bits / (cur - t))

        if math.isfinite(cur):
            vp_db, sphere_db, actual_mask = ground_truth(
                video, viewpoint, tiling, k, levels, model, true_vel, viewport_size)
            needed = np.unique(tile_of[actual_mask])
            ready = float(done[needed].max()) if needed.size else t
        else:
            vp_db = sphere_db = float("nan")
            ready = math.inf
        prev_end = play_start[-1] + d if play_start else 0.0
        start = max(ready, prev_end)
        stall = start - prev_end
        mid = viewpoint.index_at_or_before((k + 0.5) * d)
        actual = (float(viewpoint.yaw[mid]), float(viewpoint.pitch[mid]))
        if stall_total + stall > stall_cap_s:
            stall = stall_cap_s - stall_total
            aborted = True
        records.append(ChunkRecord(
            k, float(budget), chunk_bits / d, tuple(int(q) for q in levels), est,
            (float(pred[0]), float(pred[1])), actual, float(t), float(cur), float(ready),
            float(stall), float(vp_db), float(sphere_db), bool(over)))
        stall_total += stall
        if aborted:
            break
        total_bits += chunk_bits
        play_start.append(start)
        t = cur

    delivered = [r for r in records if math.isfinite(r.pspnr_db)] if aborted else records
    if aborted:
        delivered = delivered[: len(play_start)]
    playback = len(play_start) * d
    if delivered:
        p = float(np.mean([r.pspnr_db for r in delivered]))
        sp = float(np.mean([r.sphere_pspnr_db for r in delivered]))
    else:
        p = sp = 0.0
    session = stall_total + playback
    ratio = stall_total / session if session > 0 else 0.0
    bw = total_bits / playback if playback > 0 else 0.0
    return SessionResult(scheme.name, tuple(records), p, sp, ratio, bw, mos_from_pspnr(p),
                         stall_total, playback, aborted, label)


# --------------------------------------------------------------------------
# Batches and comparisons
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Workload:
    video: VideoDescriptor
    viewpoint: ViewpointTrace
    network: NetworkTrace
    manifest: Manifest | None = None
    label: str = ""


def _run_one(args):
    w, scheme, seed = args
    return run_session(w.video, w.viewpoint, w.network, scheme, w.manifest, seed, label=w.label)


def run_many(workloads: Sequence[Workload], scheme: Scheme, seed: int = 0,
             workers: int = 1) -> list[SessionResult]:
    """Sessions in input order; with ``workers > 1`` they run in a process pool."""
    jobs = [(w, scheme, seed) for w in workloads]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


@dataclass(frozen=True)
class Summary:
    scheme: str
    sessions: int
    pspnr_db: float
    sphere_pspnr_db: float
    bandwidth_bps: float
    buffering_ratio: float
    mos: float
    cap_bps: float | None = None


def summarize(results: Sequence[SessionResult], scheme: str | None = None,
              cap: float | None = None) -> Summary:
    if not results:
        raise ValueError("no sessions to summarise")
    mean = lambda attr: float(np.mean([getattr(r, attr) for r in results]))  # noqa: E731
    return Summary(scheme or results[0].scheme, len(results), mean("pspnr_db"), mean("sphere_pspnr_db"),
                   mean("bandwidth_bps"), mean("buffering_ratio"), mean("mos"), cap)


@dataclass(frozen=True)
class Comparison:
    base: dict[str, Summary]
    equal_bandwidth: tuple[Summary, Summary]
    matched_quality: tuple[Summary, Summary] | None
    first: str
    second: str

    @property
    def pspnr_gain_db(self) -> float:
        """First-scheme PSPNR minus second-scheme PSPNR at (nearly) equal bandwidth."""
        a, b = self.equal_bandwidth
        return a.pspnr_db - b.pspnr_db

    @property
    def bandwidth_match(self) -> float:
        a, b = self.equal_bandwidth
        return abs(a.bandwidth_bps - b.bandwidth_bps) / max(a.bandwidth_bps, b.bandwidth_bps, 1e-12)

    @property
    def bandwidth_saving(self) -> float:
        """1 - bandwidth of the better scheme / the other's, at matched PSPNR."""
        if self.matched_quality is None:
            return 0.0
        better, other = self.matched_quality
        if other.bandwidth_bps <= 0:
            return 0.0
        return 1.0 - better.bandwidth_bps / other.bandwidth_bps


def _bisect_cap(evaluate, lo: float, hi: float, goal, accept, iters: int = 24):
    """Bisect a bandwidth cap on a log scale; ``goal(summary) > 0`` means the cap is too high.

    Returns the accepted summary closest to the goal, or the last one tried.
    """
    best = None
    last = None
    lo, hi = math.log(max(lo, 1.0)), math.log(max(hi, 1.0))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s = evaluate(math.exp(mid))
        last = s
        g = goal(s)
        if accept(s) and (best is None or abs(g) < abs(goal(best))):
            best = s
        if g > 0:
            hi = mid
        else:
            lo = mid
    return best if best is not None else last


def compare_schemes(workloads: Sequence[Workload], first: Scheme, second: Scheme,
                    seed: int = 0, workers: int = 1) -> Comparison:
    """Compare two schemes on the same workloads.

    Equal-bandwidth quality: the scheme that used more bandwidth is capped
    until the two match within 1%. Matched-quality bandwidth: the scheme with
    the higher equal-bandwidth PSPNR is capped until its PSPNR is within
    0.5 dB of the other's uncapped PSPNR.
    """
    if not workloads:
        raise ValueError("compare_schemes needs at least one workload")
    cache: dict[tuple[str, float | None], Summary] = {}

    def run(scheme: Scheme, cap=None) -> Summary:
        key = (scheme.name, cap)
        if key not in cache:
            res = run_many(workloads, scheme.capped(cap), seed, workers)
            cache[key] = summarize(res, scheme.name, cap)
        return cache[key]

    base = {first.name: run(first), second.name: run(second)}
    a, b = base[first.name], base[second.name]
    if first == second or a == b:
        eq = (a, b)
    else:
        heavy, light, swap = (first, b, False) if a.bandwidth_bps >= b.bandwidth_bps else (second, a, True)
        target = light.bandwidth_bps
        top = max(a.bandwidth_bps, b.bandwidth_bps) * 1.5

        def close(s):
            return abs(s.bandwidth_bps - target) <= BANDWIDTH_MATCH * target

        start = run(heavy)
        if close(start):
            capped = start
        else:
            capped = _bisect_cap(lambda cap: run(heavy, cap), target * 0.25, top,
                                 lambda s: s.bandwidth_bps - target, close)
        eq = (light, capped) if swap else (capped, light)
    if eq[0].pspnr_db == eq[1].pspnr_db:
        matched = None
    else:
        better_first = eq[0].pspnr_db > eq[1].pspnr_db
        better, other = (first, base[second.name]) if better_first else (second, base[first.name])
        goal_db = other.pspnr_db
        hi_bw = max(a.bandwidth_bps, b.bandwidth_bps) * 1.5
        capped = _bisect_cap(lambda cap: run(better, cap), 1.0, hi_bw,
                             lambda s: s.pspnr_db - goal_db,
                             lambda s: abs(s.pspnr_db - goal_db) <= PSPNR_MATCH_DB)
        matched = (capped, other)
    return Comparison(base, eq, matched, first.name, second.name)


# --------------------------------------------------------------------------
# Output files
# --------------------------------------------------------------------------

RESULT_FIELDS = ("session", "label", "scheme", "seed", "pspnr_db", "sphere_pspnr_db",
                 "buffering_ratio", "bandwidth_bps", "mos", "stall_s", "playback_s", "aborted")
SUMMARY_FIELDS = ("scheme", "sessions", "pspnr_db", "sphere_pspnr_db", "bandwidth_bps",
                  "buffering_ratio", "mos")
TIMELINE_FIELDS = ("session", "chunk", "budget_bps", "bitrate_bps", "download_start", "download_end",
                   "ready", "stall_s", "pspnr_db", "sphere_pspnr_db", "pred_yaw", "pred_pitch",
                   "actual_yaw", "actual_pitch", "over_budget", "levels", "est_ratio")


def result_row(session: int, seed: int, r: SessionResult) -> list:
    return [session, r.label, r.scheme, seed, repr(r.pspnr_db), repr(r.sphere_pspnr_db),
            repr(r.buffering_ratio), repr(r.bandwidth_bps), r.mos, repr(r.stall_s),
            repr(r.playback_s), int(r.aborted)]


def timeline_rows(session: int, r: SessionResult):
    for c in r.chunks:
        yield [session, c.chunk, repr(c.budget_bps), repr(c.bitrate_bps), repr(c.download_start),
               repr(c.download_end), repr(c.ready), repr(c.stall_s), repr(c.pspnr_db),
               repr(c.sphere_pspnr_db), repr(c.predicted[0]), repr(c.predicted[1]),
               repr(c.actual[0]), repr(c.actual[1]), int(c.over_budget),
               " ".join(map(str, c.levels)), " ".join(f"{x:.4f}" for x in c.est_ratio)]


def summary_rows(rows: Sequence[dict]) -> list[list]:
    """Per-scheme means of results.csv rows (dicts with string values)."""
    by_scheme: dict[str, list[dict]] = {}
    for row in rows:
        by_scheme.setdefault(row["scheme"], []).append(row)
    out = []
    for name in sorted(by_scheme):
        group = by_scheme[name]
        mean = lambda f: float(np.mean([float(g[f]) for g in group]))  # noqa: E731
        out.append([name, len(group), repr(mean("pspnr_db")), repr(mean("sphere_pspnr_db")),
                    repr(mean("bandwidth_bps")), repr(mean("buffering_ratio")), repr(mean("mos"))])
    return out


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)
