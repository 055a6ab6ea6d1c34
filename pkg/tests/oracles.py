"""Independent brute-force references used by the tests."""

import functools
import itertools

import numpy as np


@functools.lru_cache(maxsize=8)
def level_lattice(n, q):
    """Every level vector of length ``n``, one row each, in lexicographic order."""
    grid = np.array(list(itertools.product(range(q), repeat=n)), dtype=np.intp)
    grid.setflags(write=False)
    return grid


def exhaustive_allocation(budget, weights, rates, pmse, tol=1e-9):
    """argmin over the full level lattice: objective, then size, then lexicographic vector."""
    w = np.asarray(weights, float)
    r = np.asarray(rates, float)
    m = np.asarray(pmse, float)
    n, q = r.shape
    grid = level_lattice(n, q)
    cols = np.arange(n)
    size = r[cols, grid].sum(axis=1)
    obj = (w[None, :] * m[cols, grid]).sum(axis=1)
    ok = size <= budget + 1e-9 * max(1.0, abs(budget))
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    best = obj[idx].min()
    idx = idx[obj[idx] <= best + tol * max(1.0, abs(best))]
    smallest = size[idx].min()
    idx = idx[size[idx] <= smallest + tol * max(1.0, abs(smallest))]
    return tuple(int(x) for x in grid[idx[0]]), float(obj[idx[0]]), float(size[idx[0]])


def pareto_oracle(points):
    """Quadratic-time survivors: not weakly dominated with one strict
    inequality, one lexicographically smallest representative per exact tie."""
    out = []
    for i, (s, o, v) in enumerate(points):
        dominated = False
        for j, (s2, o2, v2) in enumerate(points):
            if i == j:
                continue
            if s2 <= s and o2 <= o and (s2 < s or o2 < o):
                dominated = True
                break
            if s2 == s and o2 == o and (tuple(v2) < tuple(v) or (tuple(v2) == tuple(v) and j < i)):
                dominated = True
                break
        if not dominated:
            out.append((s, o, tuple(v)))
    return sorted(out, key=lambda p: (p[0], p[1], p[2]))
