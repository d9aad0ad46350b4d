"""Dynamic time warping over feature tracks with Euclidean local cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Backtrack codes: predecessor direction of each cell.
_DIAG, _FROM_A, _FROM_B = 0, 1, 2


@dataclass(frozen=True, eq=False)
class AlignmentPath:
    """Monotone frame pairing from (0, 0) to (len_a-1, len_b-1)."""

    pairs: list[tuple[int, int]]
    total_cost: float
    local_costs: np.ndarray


def pairwise_costs(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Euclidean distance for every frame pair; shared with test oracles so
    path-cost comparisons are bitwise."""
    diff = xa[:, None, :] - xb[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def dtw(a, b) -> AlignmentPath:
    """Globally minimal alignment under steps (1,1), (1,0), (0,1).

    Ties prefer the diagonal step, then advancing in `a`, then in `b`.
    Inputs are FeatureTracks (or anything with a `frames` matrix).
    """
    xa = np.asarray(getattr(a, "frames", a), dtype=np.float64)
    xb = np.asarray(getattr(b, "frames", b), dtype=np.float64)
    if xa.ndim != 2 or xb.ndim != 2:
        raise ValueError("inputs must be 2-D frame matrices")
    if xa.shape[0] == 0 or xb.shape[0] == 0:
        raise ValueError("cannot align an empty track")
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}")

    n, m = xa.shape[0], xb.shape[0]
    lc = pairwise_costs(xa, xb)

    cost = np.empty((n, m))
    back = np.empty((n, m), dtype=np.uint8)
    cost[0, 0] = lc[0, 0]
    back[0, 0] = _DIAG
    for j in range(1, m):
        cost[0, j] = lc[0, j] + cost[0, j - 1]
        back[0, j] = _FROM_B
    for i in range(1, n):
        cost[i, 0] = lc[i, 0] + cost[i - 1, 0]
        back[i, 0] = _FROM_A
        row = cost[i]
        prev = cost[i - 1]
        lrow = lc[i]
        brow = back[i]
        for j in range(1, m):
            diag = prev[j - 1]
            up = prev[j]
            left = row[j - 1]
            best, code = diag, _DIAG
            if up < best:
                best, code = up, _FROM_A
            if left < best:
                best, code = left, _FROM_B
            row[j] = lrow[j] + best
            brow[j] = code

    pairs = []
    i, j = n - 1, m - 1
    while True:
        pairs.append((i, j))
        if i == 0 and j == 0:
            break
        code = back[i, j]
        if code == _DIAG and i > 0 and j > 0:
            i, j = i - 1, j - 1
        elif code == _FROM_A:
            i -= 1
        else:
            j -= 1
    pairs.reverse()

    locals_ = np.array([lc[i, j] for i, j in pairs])
    total = 0.0
    for value in locals_:
        total += float(value)
    return AlignmentPath(pairs=pairs, total_cost=total, local_costs=locals_)
