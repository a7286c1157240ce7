"""Exact linear assignment by shortest augmenting paths (Hungarian method).

Rows are inserted one at a time; each insertion grows a Dijkstra-like tree
over columns using reduced costs ``cost[i, j] - u[i] - v[j]`` and augments
along the cheapest path.  The inner column scan is vectorized, giving
O(n^2 m) work with O(n m) Python-level steps in the worst case.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def linear_sum_assignment(cost) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost matching of every row to a distinct column.

    ``cost`` is ``(n, m)`` with ``n <= m`` (a wide matrix is handled by
    transposing).  Returns ``(rows, cols)`` sorted by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost must be 2-D, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise ContractError("cost matrix has non-finite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if n > m:
        cols, rows = linear_sum_assignment(cost.T)
        order = np.argsort(rows)
        return rows[order], cols[order]

    # 1-based columns; column 0 is the virtual root of each search tree
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    rows = owner[1:] - 1
    cols = np.arange(m)
    matched = rows >= 0
    rows, cols = rows[matched], cols[matched]
    order = np.argsort(rows)
    return rows[order], cols[order]
