import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import flat_video
from panosim.pspnr import pspnr_from_pmse
from panosim.tiling import (
    TilingError,
    brute_force_guillotine,
    build_tiling,
    check_partition,
    efficiency_scores,
    group_tiles,
    load_tiling,
    partition_cost,
    save_tiling,
    uniform_tiling,
)
from panosim.traces import Rect, ViewpointTrace


def enumerate_partitions(rect, n):
    """Every guillotine partition of ``rect`` into ``n`` rectangles, as frozensets."""
    if n == 1:
        return {frozenset([rect])}
    out = set()
    r0, c0, rows, cols = rect
    cuts = [(Rect(r0, c0, k, cols), Rect(r0 + k, c0, rows - k, cols)) for k in range(1, rows)]
    cuts += [(Rect(r0, c0, rows, k), Rect(r0, c0 + k, rows, cols - k)) for k in range(1, cols)]
    for a, b in cuts:
        for m in range(1, n):
            if a.area < m or b.area < n - m:
                continue
            for pa in enumerate_partitions(a, m):
                for pb in enumerate_partitions(b, n - m):
                    out.add(pa | pb)
    return out


def direct_cost(scores, rects):
    return sum(r.area * float(np.var(scores[r.row0 : r.row0 + r.rows, r.col0 : r.col0 + r.cols])) for r in rects)


def oracle_best(scores, n):
    grid = Rect(0, 0, *scores.shape)
    return min(direct_cost(scores, p) for p in enumerate_partitions(grid, n))


def test_efficiency_arithmetic():
    # a cell that is 45 dB at QP 42 and 70 dB at QP 22
    assert (70.0 - 45.0) / (42 - 22) == 1.25


def test_efficiency_flat_quality_curve():
    # every error stays under the JND, so quality sits at the ceiling at every QP
    video = flat_video(1, error=[0.1, 0.2, 0.4, 0.8, 1.6])
    tr = ViewpointTrace(np.arange(20) * 0.05, np.zeros(20), np.zeros(20))
    assert np.all(efficiency_scores(video, [tr]) == 0.0)


def test_efficiency_hand_computed():
    # head turning at 10 deg/s over static objects: A = 1.5, C = 3 at mid gray
    video = flat_video(1)
    t = np.arange(20) * 0.05
    tr = ViewpointTrace(t, 10.0 * t, np.zeros(20))
    gamma = efficiency_scores(video, [tr])
    jnd = 3.0 * 1.5
    top = pspnr_from_pmse(max(2.0 - jnd, 0.0) ** 2)
    bottom = pspnr_from_pmse((32.0 - jnd) ** 2)
    assert top == 100.0
    assert np.allclose(gamma, (top - bottom) / 20.0, rtol=0, atol=1e-12)


def test_efficiency_needs_coverage():
    video = flat_video(2)
    tr = ViewpointTrace(np.arange(20) * 0.05, np.zeros(20), np.zeros(20))
    with pytest.raises(TilingError, match="chunk 1"):
        efficiency_scores(video, [tr])


def test_uniform_scores_zero_cost_and_deterministic():
    scores = np.full((12, 24), 3.0)
    g = group_tiles(scores, 30)
    check_partition(g.rects, (12, 24), 30)
    assert g.cost == 0.0
    assert group_tiles(scores, 30) == g


def test_two_by_two_row_cut():
    scores = np.array([[1.0, 1.0], [9.0, 9.0]])
    for beam in (1, 32):
        g = group_tiles(scores, 2, beam=beam)
        assert set(g.rects) == {Rect(0, 0, 1, 2), Rect(1, 0, 1, 2)}
        assert g.cost == 0.0
    bf = brute_force_guillotine(scores, 2)
    assert bf.cost == 0.0 and set(bf.rects) == set(g.rects)


def test_brute_force_small_cases():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 5, (3, 4))
    one = brute_force_guillotine(x, 1)
    assert one.cost == pytest.approx(12 * np.var(x))
    assert brute_force_guillotine(np.ones((3, 4)), 3).cost == 0.0
    with pytest.raises(TilingError):
        brute_force_guillotine(np.ones((4, 4)), 2)
    with pytest.raises(TilingError):
        brute_force_guillotine(np.ones((3, 4)), 5)


def test_brute_force_matches_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(20):
        shape = [(2, 3), (3, 2), (3, 3), (3, 4), (4, 3)][rng.integers(5)]
        x = rng.integers(0, 6, shape).astype(float)
        n = int(rng.integers(1, 5))
        assert brute_force_guillotine(x, n).cost == pytest.approx(oracle_best(x, n), abs=1e-9)


def test_two_by_three_within_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.uniform(0, 10, (2, 3))
        g = group_tiles(x, 3)
        check_partition(g.rects, (2, 3), 3)
        assert g.cost >= oracle_best(x, 3) - 1e-9


def test_group_tiles_rejects_bad_n():
    with pytest.raises(TilingError):
        group_tiles(np.ones((2, 2)), 5)
    with pytest.raises(TilingError):
        group_tiles(np.ones((2, 2)), 0)


fields = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.floats(0, 10))


@settings(max_examples=80, deadline=None)
@given(fields, st.integers(1, 48), st.sampled_from([1, 4, 32]))
def test_partition_valid(x, n, beam):
    n = min(n, x.size)
    g = group_tiles(x, n, beam=beam)
    check_partition(g.rects, x.shape, n)
    assert g.cost == pytest.approx(direct_cost(x, g.rects), abs=1e-7)
    assert group_tiles(x, n, beam=beam) == g


@settings(max_examples=60, deadline=None)
@given(fields, st.integers(1, 20))
def test_greedy_split_improves(x, n):
    n = min(n, x.size - 1)
    if n < 1:
        return
    a = group_tiles(x, n, beam=1)
    b = group_tiles(x, n + 1, beam=1)
    assert b.cost <= a.cost + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=3, max_size=3), st.integers(1, 4), st.booleans())
def test_separable_fields_reach_optimum(vals, n, by_rows):
    x = np.repeat(np.asarray(vals)[:, None], 4, axis=1) if by_rows else np.repeat(np.asarray(vals)[None, :], 3, axis=0)
    x = x if by_rows else x.T
    assert group_tiles(x, n).cost == pytest.approx(brute_force_guillotine(x, n).cost, abs=1e-9)


def test_check_partition_catches_errors():
    with pytest.raises(TilingError):
        check_partition([Rect(0, 0, 1, 2), Rect(0, 1, 1, 1)], (1, 2))
    with pytest.raises(TilingError):
        check_partition([Rect(0, 0, 1, 1)], (1, 2))
    with pytest.raises(TilingError):
        check_partition([Rect(0, 0, 1, 2)], (1, 2), n=2)


def test_static_and_per_chunk_tilings(tmp_path):
    rng = np.random.default_rng(4)
    scores = rng.uniform(0, 3, (3, 12, 24))
    static = build_tiling(scores, 30)
    assert static.static and static.num_tiles == 30
    assert static.rects(0) == static.rects(2)
    per = build_tiling(scores, 30, static=False)
    assert not per.static
    for k in range(3):
        assert per.rects(k) == group_tiles(scores[k], 30).rects
        assert per.cell_map(k).max() == 29
    assert static.rects(0) == group_tiles(scores.mean(axis=0), 30).rects
    for tl in (static, per):
        save_tiling(tl, tmp_path / "t.csv")
        assert load_tiling(tmp_path / "t.csv", 3) == tl


def test_single_tile_and_uniform():
    single = build_tiling(np.zeros((2, 12, 24)), 1)
    assert single.rects(0) == (Rect(0, 0, 12, 24),)
    u = uniform_tiling(2, (6, 12))
    assert u.num_tiles == 72 and all(r.area == 4 for r in u.rects(1))
    assert math.isclose(partition_cost(np.ones((12, 24)), u.rects(0)), 0.0)
