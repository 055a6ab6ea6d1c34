"""Viewer action state (relative speed, luminance change, DoF difference) from traces."""

from __future__ import annotations

import numpy as np

from .jnd import LUMINANCE_WINDOW_S, JndModel
from .traces import VideoDescriptor, ViewpointTrace, cell_of


def head_velocity(trace: ViewpointTrace, lag: int = 1, causal: bool = True) -> np.ndarray:
    """(n, 2) head angular velocity in deg/s (yaw, pitch).

    Causal mode uses the backward difference over ``lag`` samples, so a value
    at sample i only looks at samples <= i. Non-causal mode uses the central
    difference over neighbouring samples.
    """
    n = len(trace)
    pos = np.stack([trace.unwrapped_yaw(), trace.pitch], axis=1)
    if n < 2:
        return np.zeros((n, 2))
    dt = trace.sample_period_s
    vel = np.zeros((n, 2))
    if causal:
        lag = max(1, min(lag, n - 1))
        vel[lag:] = (pos[lag:] - pos[:-lag]) / (lag * dt)
        # the first samples only have a shorter history
        for i in range(1, lag):
            vel[i] = (pos[i] - pos[0]) / (i * dt)
        vel[0] = vel[1]
    else:
        vel[1:-1] = (pos[2:] - pos[:-2]) / (2 * dt)
        vel[0] = (pos[1] - pos[0]) / dt
        vel[-1] = (pos[-1] - pos[-2]) / dt
    return vel


def chunk_of(video: VideoDescriptor, t: float) -> int:
    return int(min(max(int(np.floor(t / video.chunk_duration_s + 1e-9)), 0), video.num_chunks - 1))


def frame_indices(trace: ViewpointTrace, t0: float, t1: float) -> np.ndarray:
    """Indices of samples with ``t0 <= time < t1``."""
    lo = np.searchsorted(trace.times, t0 - 1e-9, side="left")
    hi = np.searchsorted(trace.times, t1 - 1e-9, side="left")
    return np.arange(lo, hi)


def frame_factors(video: VideoDescriptor, trace: ViewpointTrace, indices, velocity=None):
    """Realised (speed, luminance change, DoF difference), each shaped (F, rows, cols).

    Relative speed is measured against each cell's object; luminance change is
    against the cell the viewer focused on five seconds earlier; DoF
    difference is against the currently focused cell.
    """
    if velocity is None:
        velocity = head_velocity(trace, causal=False)
    indices = np.asarray(indices, dtype=int)
    f = len(indices)
    rows, cols = video.unit_grid
    speed = np.zeros((f, rows, cols))
    lum = np.zeros((f, rows, cols))
    dof = np.zeros((f, rows, cols))
    for n, i in enumerate(indices):
        tau = float(trace.times[i])
        k = chunk_of(video, tau)
        rel = velocity[i][None, None, :] - video.velocity[k]
        speed[n] = np.hypot(rel[..., 0], rel[..., 1])
        fr, fc = cell_of(trace.yaw[i], trace.pitch[i])
        dof[n] = np.abs(video.dof[k] - video.dof[k, fr, fc])
        j = trace.index_at_or_before(max(tau - LUMINANCE_WINDOW_S, trace.start))
        k5 = chunk_of(video, float(trace.times[j]))
        pr, pc = cell_of(trace.yaw[j], trace.pitch[j])
        lum[n] = np.abs(video.luminance[k] - video.luminance[k5, pr, pc])
    return speed, lum, dof


def frame_ratios(video, trace, indices, model: JndModel, velocity=None) -> np.ndarray:
    s, l, d = frame_factors(video, trace, indices, velocity)
    return model.ratio(s, l, d)
