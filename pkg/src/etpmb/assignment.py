"""Rectangular minimum-cost assignment (Hungarian method, shortest augmenting paths)."""
from __future__ import annotations

from typing import Tuple

import numpy as np


class InfeasibleAssignmentError(ValueError):
    pass


def _hungarian(a: np.ndarray) -> np.ndarray:
    """Solve a finite n x m problem with n <= m; returns the column of every row."""
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1  # first minimum: smallest column index wins ties
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    cols = np.full(n, -1, dtype=int)
    for j in range(1, m + 1):
        if p[j]:
            cols[p[j] - 1] = j - 1
    return cols


def solve(costs, allow_forbidden: bool = False) -> Tuple[np.ndarray, float]:
    """Minimum-cost one-to-one assignment of rows to columns.

    ``costs`` may contain ``inf`` for forbidden pairs. Every row is assigned
    when ``n <= m``; otherwise every column is covered and surplus rows get
    ``-1``. With ``allow_forbidden`` a forbidden pair may be used when nothing
    else is possible; it is then reported as ``-1`` and excluded from the cost.

    Returns ``(assignment, total_cost)`` where ``assignment[i]`` is the column
    of row ``i``.
    """
    c = np.atleast_2d(np.asarray(costs, dtype=float))
    n, m = c.shape
    if n == 0 or m == 0:
        raise ValueError("cost matrix must have at least one row and one column")
    if np.any(c < 0) or np.any(np.isnan(c)):
        raise ValueError("costs must be nonnegative")
    forbidden = ~np.isfinite(c)
    finite = c[~forbidden]
    # big enough that any finite full assignment beats one using a forbidden pair
    sentinel = (finite.max() if finite.size else 1.0) * (min(n, m) + 1) + 1.0
    a = np.where(forbidden, sentinel, c)

    if n <= m:
        cols = _hungarian(a)
    else:
        rows_of_col = _hungarian(a.T)
        cols = np.full(n, -1, dtype=int)
        cols[rows_of_col] = np.arange(m)

    assigned = cols >= 0
    bad = assigned.copy()
    bad[assigned] = forbidden[np.flatnonzero(assigned), cols[assigned]]
    if bad.any():
        if not allow_forbidden:
            raise InfeasibleAssignmentError("no feasible assignment avoids the forbidden pairs")
        cols[bad] = -1
    total = float(c[np.flatnonzero(cols >= 0), cols[cols >= 0]].sum())
    return cols, total
