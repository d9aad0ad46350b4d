from __future__ import annotations

import numpy as np
import pytest

from voxkit.dtw import dtw, pairwise_costs


def brute_force_dtw(xa, xb):
    """Oracle: enumerate every monotone path and take the cheapest.

    Shares only the elementary pairwise distances with the implementation;
    the search itself is an independent exhaustive recursion. Costs are
    accumulated in path order so comparisons can be exact.
    """
    lc = pairwise_costs(np.asarray(xa, float), np.asarray(xb, float))
    n, m = lc.shape
    best = [np.inf, None, 0]

    def walk(i, j, acc, path):
        acc = acc + lc[i, j]
        path = path + [(i, j)]
        if i == n - 1 and j == m - 1:
            if acc < best[0]:
                best[0], best[1], best[2] = acc, path, 1
            elif acc == best[0]:
                best[2] += 1
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc, path)
        if i + 1 < n:
            walk(i + 1, j, acc, path)
        if j + 1 < m:
            walk(i, j + 1, acc, path)

    walk(0, 0, 0.0, [])
    return best[0], best[1], best[2]


def test_identical_tracks_zero_cost():
    x = np.random.default_rng(0).standard_normal((5, 3))
    path = dtw(x, x)
    assert path.total_cost == 0.0
    assert path.pairs == [(i, i) for i in range(5)]


def test_small_known_case():
    a = np.array([[0.0], [1.0]])
    b = np.array([[0.0], [0.0], [1.0]])
    path = dtw(a, b)
    assert path.total_cost == 0.0
    assert path.pairs[0] == (0, 0)
    assert path.pairs[-1] == (1, 2)


def test_path_shape_invariants():
    rng = np.random.default_rng(42)
    a = rng.standard_normal((6, 2))
    b = rng.standard_normal((4, 2))
    path = dtw(a, b)
    assert path.pairs[0] == (0, 0)
    assert path.pairs[-1] == (5, 3)
    for (i0, j0), (i1, j1) in zip(path.pairs, path.pairs[1:]):
        assert (i1 - i0, j1 - j0) in {(0, 1), (1, 0), (1, 1)}
    assert path.total_cost == pytest.approx(float(np.sum(path.local_costs)))
    assert path.total_cost >= 0.0


def test_symmetry():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = rng.standard_normal((int(rng.integers(1, 7)), 3))
        b = rng.standard_normal((int(rng.integers(1, 7)), 3))
        assert dtw(a, b).total_cost == pytest.approx(dtw(b, a).total_cost, abs=1e-12)


def test_matches_exhaustive_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 7))
        d = int(rng.integers(1, 4))
        a = rng.standard_normal((n, d))
        b = rng.standard_normal((m, d))
        expected_cost, expected_path, n_optimal = brute_force_dtw(a, b)
        path = dtw(a, b)
        assert path.total_cost == expected_cost
        if n_optimal == 1:
            assert path.pairs == expected_path


def test_dim_mismatch():
    with pytest.raises(ValueError):
        dtw(np.zeros((3, 2)), np.zeros((3, 3)))


def test_empty_input():
    with pytest.raises(ValueError):
        dtw(np.zeros((0, 2)), np.zeros((3, 2)))
