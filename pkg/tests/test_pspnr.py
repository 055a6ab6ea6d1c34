import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panosim.pspnr import (
    chunk_pspnr,
    pmse,
    pmse_from_pspnr,
    pspnr_from_pmse,
    sampled_mean_pmse,
    sampled_sequence_pspnr,
    tile_pmse,
)


def brute_pmse(p, q, j):
    total = 0.0
    for a, b, t in zip(np.ravel(p), np.ravel(q), np.ravel(j)):
        err = abs(a - b)
        total += (err - t) ** 2 if err >= t else 0.0
    return total / np.size(p)


def test_pmse_examples():
    plane = np.full((4, 4), 100.0)
    assert pmse(plane, plane, np.full((4, 4), 4.0)) == 0.0
    assert pmse(plane, plane + 10, np.full((4, 4), 4.0)) == 36.0
    assert brute_pmse(plane, plane + 10, np.full((4, 4), 4.0)) == 36.0
    assert pmse(plane, plane - 3, np.full((4, 4), 4.0)) == 0.0
    with pytest.raises(ValueError, match="dimensions"):
        pmse(plane, plane[:2], plane)


def test_pspnr_examples():
    assert pspnr_from_pmse(36) == pytest.approx(32.57, abs=0.01)
    assert pspnr_from_pmse(1) == pytest.approx(48.13, abs=0.01)
    assert pspnr_from_pmse(0) == 100.0
    assert pspnr_from_pmse(0, ceiling=80.0) == 80.0
    assert pmse_from_pspnr(pspnr_from_pmse(36)) == pytest.approx(36)


def test_tile_pmse_examples():
    assert tile_pmse(10, 4, 1) == 36.0
    assert tile_pmse(10, 4, 3) == 0.0
    assert tile_pmse(0, 4, 1) == 0.0


def test_chunk_pspnr_examples():
    assert chunk_pspnr([(1.0, 36.0)]) == pytest.approx(32.57, abs=0.01)
    assert chunk_pspnr([(2.0, 0.0), (2.0, 72.0)]) == pytest.approx(32.57, abs=0.01)
    assert chunk_pspnr([(1.0, 0.0), (3.0, 0.0)]) == 100.0
    with pytest.raises(ValueError):
        chunk_pspnr([])


def test_sampled_examples():
    frames = [36.0 + 10 * i for i in range(7)]
    assert sampled_mean_pmse(frames, 1) == pytest.approx(np.mean(frames))
    same = [25.0] * 20
    assert sampled_sequence_pspnr(same, 10) == pspnr_from_pmse(25.0)
    alt = [36.0, 64.0] * 10
    assert sampled_mean_pmse(alt, 2) == 36.0
    # uneven tail: frames 0 and 3 sampled, frame 3 stands in for itself only
    assert sampled_mean_pmse([1.0, 9.0, 9.0, 4.0], 3) == pytest.approx((3 * 1.0 + 4.0) / 4)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 255), st.floats(0.01, 30), st.floats(1, 3), st.integers(1, 6), st.integers(1, 6))
def test_tile_pmse_matches_planes(e, c, a, h, w):
    rng = np.random.default_rng(int(e * 1000) % 2**32)
    orig = rng.uniform(0, 255, (h, w))
    sign = rng.choice([-1.0, 1.0], (h, w))
    dist = orig + sign * e
    assert pmse(orig, dist, np.full((h, w), c * a)) == pytest.approx(tile_pmse(e, c, a), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 5))
def test_filtering_monotone(seed, bump):
    rng = np.random.default_rng(seed)
    p, q = rng.uniform(0, 255, (5, 5)), rng.uniform(0, 255, (5, 5))
    j = rng.uniform(0.5, 30, (5, 5))
    j2 = j.copy()
    j2[rng.integers(5), rng.integers(5)] += bump
    assert pmse(p, q, j2) <= pmse(p, q, j)
    assert pspnr_from_pmse(pmse(p, q, j2)) >= pspnr_from_pmse(pmse(p, q, j))
    assert pmse(p, q, j) == pytest.approx(brute_pmse(p, q, j), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 10), st.floats(0, 500)), min_size=1, max_size=6), st.floats(0.1, 50))
def test_chunk_pspnr_scale_invariant(tiles, k):
    scaled = [(s * k, m) for s, m in tiles]
    assert chunk_pspnr(scaled) == pytest.approx(chunk_pspnr(tiles), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e5), st.floats(1.001, 10))
def test_pspnr_strictly_decreasing(m, k):
    assert pspnr_from_pmse(m * k, ceiling=1e9) < pspnr_from_pmse(m, ceiling=1e9)
