"""Peak signal-to-perceptible-noise ratio.

Only distortion at or above the per-pixel JND counts, and only the part that
exceeds it. ``pmse`` works on pixel planes; ``tile_pmse`` is the same formula
for a tile whose error and JND are constant across its pixels, which is what
the simulator uses.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

PEAK = 255.0
DEFAULT_CEILING_DB = 100.0


def pmse(original, distorted, jnd) -> float:
    """Perceptible mean squared error of ``distorted`` against ``original``."""
    p = np.asarray(original, dtype=float)
    p_hat = np.asarray(distorted, dtype=float)
    j = np.asarray(jnd, dtype=float)
    if not (p.shape == p_hat.shape == j.shape):
        raise ValueError(
            f"plane dimensions differ: original {p.shape}, distorted {p_hat.shape}, jnd {j.shape}"
        )
    if p.size == 0:
        raise ValueError("empty pixel plane")
    err = np.abs(p - p_hat)
    visible = err >= j
    return float(np.sum(np.where(visible, (err - j) ** 2, 0.0)) / p.size)


def pspnr_from_pmse(m, ceiling: float = DEFAULT_CEILING_DB):
    """``20 log10(255 / sqrt(m))``; ``m == 0`` maps to ``ceiling``."""
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValueError("pmse must be non-negative")
    with np.errstate(divide="ignore"):
        db = np.where(m > 0, 20.0 * np.log10(PEAK / np.sqrt(np.where(m > 0, m, 1.0))), ceiling)
    db = np.minimum(db, ceiling)
    return float(db) if db.ndim == 0 else db


def pmse_from_pspnr(db, ceiling: float = DEFAULT_CEILING_DB):
    """Inverse of :func:`pspnr_from_pmse`; the ceiling maps back to 0."""
    db = np.asarray(db, dtype=float)
    m = np.where(db >= ceiling, 0.0, PEAK**2 / 10.0 ** (db / 10.0))
    return float(m) if m.ndim == 0 else m


def tile_pmse(e, c, a):
    """PMSE of a homogeneous tile: mean error ``e``, content JND ``c``, action ratio ``a``."""
    out = np.maximum(np.asarray(e, dtype=float) - np.asarray(c, dtype=float) * np.asarray(a, dtype=float), 0.0) ** 2
    return float(out) if out.ndim == 0 else out


def chunk_pspnr(tiles: Sequence[tuple[float, float]], ceiling: float = DEFAULT_CEILING_DB) -> float:
    """PSPNR of a chunk from ``(area, pmse)`` pairs via the area-weighted mean PMSE."""
    if len(tiles) == 0:
        raise ValueError("chunk_pspnr needs at least one tile")
    arr = np.asarray(tiles, dtype=float).reshape(-1, 2)
    areas, m = arr[:, 0], arr[:, 1]
    if np.any(areas <= 0):
        raise ValueError("tile areas must be positive")
    return pspnr_from_pmse(float(np.sum(areas * m) / np.sum(areas)), ceiling)


def sampled_mean_pmse(frames: Sequence, stride: int = 10,
                      evaluate: Callable | None = None):
    """Mean PMSE over ``frames`` evaluating only every ``stride``-th frame.

    Each evaluated frame stands in for itself and the ``stride - 1`` frames
    after it. ``evaluate`` maps a frame to its PMSE (scalar or array); when
    omitted the frames are PMSE values already.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = len(frames)
    if n == 0:
        raise ValueError("no frames")
    total = None
    for start in range(0, n, stride):
        weight = min(stride, n - start)
        m = frames[start] if evaluate is None else evaluate(frames[start])
        m = np.asarray(m, dtype=float) * weight
        total = m if total is None else total + m
    out = total / n
    return float(out) if np.ndim(out) == 0 else out


def sampled_sequence_pspnr(frames: Sequence, stride: int = 10,
                           evaluate: Callable | None = None,
                           ceiling: float = DEFAULT_CEILING_DB):
    return pspnr_from_pmse(sampled_mean_pmse(frames, stride, evaluate), ceiling)
