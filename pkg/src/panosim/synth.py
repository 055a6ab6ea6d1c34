"""Synthetic scenes: video descriptors, viewer head traces and LTE-like links.

Encodings follow the usual x264 rule of thumb: +6 QP halves the bitrate and
doubles the mean absolute error. Background content is static over a video,
moving objects carry their own features and ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .traces import (
    DEFAULT_QPS,
    DEFAULT_SAMPLE_PERIOD,
    UNIT_COLS,
    UNIT_ROWS,
    NetworkTrace,
    VideoDescriptor,
    ViewpointTrace,
    cell_centers,
    yaw_delta,
)

ARCHETYPES = ("tracked-object", "night-scene", "mixed-dof")
MAX_TURN_SPEED = 150.0  # deg/s, head re-orientation
FREE_LOOK_SPEED = 60.0


class SceneSpecError(ValueError):
    pass


def ladder(e0: float, r0: float, qps=DEFAULT_QPS, qp_step: float = 6.0):
    """Error and bitrate for each QP: ``e0 * 2**((q - q0)/step)``, ``r0 * 2**(-(q - q0)/step)``."""
    q = np.asarray(qps, dtype=float) - float(qps[0])
    return e0 * 2.0 ** (q / qp_step), r0 * 2.0 ** (-q / qp_step)


@dataclass(frozen=True)
class SceneSpec:
    archetype: str = "tracked-object"
    duration_s: float = 30.0
    chunk_duration_s: float = 1.0
    base_rate_bps: float = 18_000.0
    base_error: float = 2.4
    quality_levels: tuple[int, ...] = DEFAULT_QPS
    qp_step: float = 6.0
    object_speed: float = 25.0

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise SceneSpecError(f"unknown archetype {self.archetype!r}; choose from {ARCHETYPES}")
        for name in ("duration_s", "chunk_duration_s", "base_rate_bps", "base_error", "qp_step"):
            if not getattr(self, name) > 0:
                raise SceneSpecError(f"{name} must be positive")
        if self.object_speed < 0:
            raise SceneSpecError("object_speed must be non-negative")
        if round(self.duration_s / self.chunk_duration_s) < 1:
            raise SceneSpecError("duration shorter than one chunk")
        if len(self.quality_levels) < 1 or list(self.quality_levels) != sorted(set(self.quality_levels)):
            raise SceneSpecError("quality_levels must be strictly increasing")

    @property
    def num_chunks(self) -> int:
        return int(round(self.duration_s / self.chunk_duration_s))


@dataclass(frozen=True)
class ObjectTrack:
    yaw0: float
    pitch0: float
    yaw_speed: float
    pitch_amp: float
    pitch_period: float
    luminance: float
    dof: float
    texture: float
    size_yaw: float = 30.0
    size_pitch: float = 30.0
    phase: float = 0.0

    def position(self, t):
        """Unwrapped yaw and pitch at time ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        yaw = self.yaw0 + self.yaw_speed * t
        pitch = self.pitch0 + self.pitch_amp * np.sin(2 * math.pi * t / self.pitch_period + self.phase)
        return yaw, pitch


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    luminance: np.ndarray
    texture: np.ndarray
    dof: np.ndarray
    rate_jitter: np.ndarray
    error_jitter: np.ndarray
    objects: tuple[ObjectTrack, ...] = field(default_factory=tuple)


def _smooth_field(rng, lo, hi, sigma=2.0):
    raw = rng.standard_normal((UNIT_ROWS, UNIT_COLS))
    sm = gaussian_filter(raw, sigma=sigma, mode=("nearest", "wrap"))
    sm = (sm - sm.min()) / max(sm.max() - sm.min(), 1e-12)
    return lo + (hi - lo) * sm


def build_scene(spec: SceneSpec, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    kind = spec.archetype
    speed = spec.object_speed
    if kind == "tracked-object":
        lum = _smooth_field(rng, 85.0, 170.0)
        tex = _smooth_field(rng, 35.0, 90.0)
        dof = _smooth_field(rng, 0.05, 0.25)
        direction = rng.choice([-1.0, 1.0])
        objects = (
            ObjectTrack(rng.uniform(0, 360), rng.uniform(-10, 10), direction * speed, 10.0, 12.0,
                        luminance=140.0, dof=0.8, texture=10.0, phase=rng.uniform(0, 2 * math.pi)),
            ObjectTrack(rng.uniform(0, 360), rng.uniform(-15, 5), -direction * 0.8 * speed, 6.0, 9.0,
                        luminance=115.0, dof=0.6, texture=14.0, phase=rng.uniform(0, 2 * math.pi)),
        )
    elif kind == "night-scene":
        lum = _smooth_field(rng, 10.0, 45.0)
        tex = _smooth_field(rng, 8.0, 30.0)
        dof = _smooth_field(rng, 0.05, 0.2)
        for _ in range(int(rng.integers(4, 7))):
            r, c = int(rng.integers(2, UNIT_ROWS - 2)), int(rng.integers(0, UNIT_COLS))
            lum[r, c] = rng.uniform(200.0, 240.0)
            lum[r, (c + 1) % UNIT_COLS] = max(lum[r, (c + 1) % UNIT_COLS], rng.uniform(150.0, 200.0))
        objects = (
            ObjectTrack(rng.uniform(0, 360), -10.0, 0.35 * speed, 3.0, 15.0,
                        luminance=190.0, dof=0.6, texture=15.0),
            ObjectTrack(rng.uniform(0, 360), -5.0, -0.5 * speed, 4.0, 11.0,
                        luminance=170.0, dof=0.5, texture=15.0),
        )
    else:  # mixed-dof
        lum = _smooth_field(rng, 90.0, 160.0)
        tex = _smooth_field(rng, 25.0, 70.0)
        dof = _smooth_field(rng, 0.05, 0.15)
        rows = np.arange(UNIT_ROWS)[:, None]
        near = _smooth_field(rng, 1.2, 2.0)
        dof = np.where(rows >= 7, near, dof)
        objects = (
            ObjectTrack(rng.uniform(0, 360), -20.0, 0.5 * speed, 5.0, 10.0,
                        luminance=130.0, dof=1.0, texture=15.0),
            ObjectTrack(rng.uniform(0, 360), 10.0, -0.4 * speed, 5.0, 13.0,
                        luminance=120.0, dof=0.9, texture=18.0),
        )
    return Scene(
        spec=spec,
        luminance=np.clip(lum, 0.0, 255.0),
        texture=np.clip(tex, 0.0, 255.0),
        dof=np.maximum(dof, 0.0),
        rate_jitter=rng.uniform(0.9, 1.1, (UNIT_ROWS, UNIT_COLS)),
        error_jitter=rng.uniform(0.9, 1.1, (UNIT_ROWS, UNIT_COLS)),
        objects=objects,
    )


def _object_footprint(obj: ObjectTrack, t_mid: float) -> np.ndarray:
    yaw, pitch = obj.position(t_mid)
    cy, cp = cell_centers()
    dy = np.abs(yaw_delta(float(yaw), cy))
    dp = np.abs(cp - float(pitch))
    mask = (dy <= obj.size_yaw / 2.0) & (dp <= obj.size_pitch / 2.0)
    if not mask.any():
        mask[np.unravel_index(np.argmin(dy + dp), mask.shape)] = True
    return mask


def _cell_ladders(spec: SceneSpec, texture, rate_jitter, error_jitter, moving):
    r0 = spec.base_rate_bps * (0.45 + texture / 90.0) * rate_jitter * np.where(moving, 1.25, 1.0)
    e0 = spec.base_error * (0.75 + texture / 160.0) * error_jitter
    q = np.asarray(spec.quality_levels, dtype=float) - spec.quality_levels[0]
    err = e0[..., None] * 2.0 ** (q / spec.qp_step)
    rate = r0[..., None] * 2.0 ** (-q / spec.qp_step)
    return rate, np.minimum(err, 255.0)


def generate_synthetic_video(spec: SceneSpec, seed: int) -> VideoDescriptor:
    """Deterministic descriptor for ``(spec, seed)``."""
    scene = build_scene(spec, seed)
    k = spec.num_chunks
    d = spec.chunk_duration_s
    shape = (k, UNIT_ROWS, UNIT_COLS)
    lum = np.broadcast_to(scene.luminance, shape).copy()
    tex = np.broadcast_to(scene.texture, shape).copy()
    dof = np.broadcast_to(scene.dof, shape).copy()
    vel = np.zeros(shape + (2,))
    moving = np.zeros(shape, dtype=bool)
    for obj in scene.objects:
        for c in range(k):
            t0, t1 = c * d, (c + 1) * d
            mask = _object_footprint(obj, (t0 + t1) / 2.0)
            y0, p0 = obj.position(t0)
            y1, p1 = obj.position(t1)
            vel[c][mask] = ((y1 - y0) / d, (p1 - p0) / d)
            lum[c][mask] = obj.luminance
            tex[c][mask] = obj.texture
            dof[c][mask] = obj.dof
            moving[c] |= mask
    rate, err = _cell_ladders(spec, tex, scene.rate_jitter, scene.error_jitter, moving)
    return VideoDescriptor(
        quality_levels=spec.quality_levels, velocity=vel, luminance=lum, dof=dof,
        texture=tex, bitrate=rate, error=err, chunk_duration_s=d,
        meta={"archetype": spec.archetype, "seed": int(seed)},
    )


def _ease(x):
    x = np.clip(x, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(math.pi * x)


def generate_viewpoint_trace(spec: SceneSpec, scene_seed: int, user_seed: int,
                             track_fraction: float = 0.7,
                             period: float = DEFAULT_SAMPLE_PERIOD,
                             jitter_deg: float = 0.15,
                             stickiness: float = 0.75) -> ViewpointTrace:
    """Head trace that follows a random object ``track_fraction`` of the time.

    The rest of the time the viewer turns to a random region and lingers there
    with a slow drift.
    """
    if not 0.0 <= track_fraction <= 1.0:
        raise SceneSpecError("track_fraction must be in [0, 1]")
    scene = build_scene(spec, scene_seed)
    rng = np.random.default_rng([int(scene_seed), int(user_seed), 0x5EED])
    n = int(round(spec.duration_s / period)) + 1
    t = np.arange(n) * period
    yaw = np.zeros(n)
    pitch = np.zeros(n)
    cur_yaw, cur_pitch = rng.uniform(0, 360), rng.uniform(-20, 20)
    last_obj = None
    i = 0
    while i < n:
        seg = int(round(rng.uniform(3.0, 8.0) / period))
        j = min(n, i + max(seg, 1))
        ts = t[i:j]
        tau = (ts - ts[0])
        if scene.objects and rng.random() < track_fraction:
            # viewers mostly stay with the object they followed last
            if last_obj is None or rng.random() >= stickiness:
                last_obj = int(rng.integers(len(scene.objects)))
            obj = scene.objects[last_obj]
            off_y, off_p = rng.normal(0.0, 2.0, 2)
            oy, op = obj.position(ts)
            oy = oy + off_y
            op = op + off_p
            # catch up with the object at a bounded head speed, then pursue it
            start = cur_yaw + yaw_delta(cur_yaw, float(oy[0]))
            oy = oy - oy[0] + start
            catch = max(0.5, math.hypot(start - cur_yaw, float(op[0]) - cur_pitch) / MAX_TURN_SPEED)
            w = _ease(tau / catch)
            seg_yaw = cur_yaw + w * (oy - cur_yaw)
            seg_pitch = cur_pitch + w * (op - cur_pitch)
        else:
            ty = cur_yaw + rng.uniform(-150.0, 150.0)
            tp = float(np.clip(rng.normal(0.0, 20.0), -60.0, 60.0))
            dist = math.hypot(ty - cur_yaw, tp - cur_pitch)
            move = max(dist / FREE_LOOK_SPEED, 0.3)
            w = _ease(tau / move)
            drift_y = np.cumsum(rng.normal(0.0, 0.05, len(ts)))
            drift_p = np.cumsum(rng.normal(0.0, 0.03, len(ts)))
            seg_yaw = cur_yaw + w * (ty - cur_yaw) + drift_y * (tau > move)
            seg_pitch = cur_pitch + w * (tp - cur_pitch) + drift_p * (tau > move)
        yaw[i:j] = seg_yaw
        pitch[i:j] = seg_pitch
        cur_yaw, cur_pitch = float(seg_yaw[-1]), float(seg_pitch[-1])
        i = j
    noise = np.zeros((n, 2))
    eps = rng.normal(0.0, jitter_deg * math.sqrt(1 - 0.9**2), (n, 2))
    for k in range(1, n):
        noise[k] = 0.9 * noise[k - 1] + eps[k]
    yaw = yaw + noise[:, 0]
    pitch = np.clip(pitch + noise[:, 1], -89.0, 89.0)
    return ViewpointTrace(np.round(t, 9), yaw, pitch)


def generate_network_trace(duration_s: float, mean_bps: float, seed: int,
                           period: float = 1.0, variability: float = 0.35) -> NetworkTrace:
    """Log-AR(1) throughput sampled every ``period`` seconds, rescaled to ``mean_bps``."""
    if duration_s <= 0 or mean_bps < 0 or period <= 0:
        raise SceneSpecError("duration, mean and period must be positive")
    rng = np.random.default_rng(seed)
    n = max(int(math.ceil(duration_s / period)), 1)
    x = np.zeros(n)
    eps = rng.normal(0.0, variability * math.sqrt(1 - 0.8**2), n)
    x[0] = rng.normal(0.0, variability)
    for i in range(1, n):
        x[i] = 0.8 * x[i - 1] + eps[i]
    bw = np.exp(x)
    bw = np.maximum(bw / bw.mean(), 0.05)
    bw = bw / bw.mean() * mean_bps
    return NetworkTrace(np.round(np.arange(n) * period, 9), bw)
