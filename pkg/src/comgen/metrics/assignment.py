"""Munkres (Hungarian) assignment of latents to factors."""
from __future__ import annotations

import numpy as np

from ..errors import MetricError


def min_cost_assignment(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost assignment of every row to a distinct column (rows <= columns).

    Shortest augmenting path with row/column potentials, O(n^2 m).
    Returns the column chosen for each row and the total cost.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        raise MetricError(f"cannot assign {n} rows to {m} columns")
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)  # owner[j]: 1-based row matched to column j, 0 = free
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.full(n, -1, dtype=int)
    for j in range(1, m + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols, float(cost[np.arange(n), cols].sum())


def munkres_assign(C, rtol: float = 1e-12) -> dict[int, int]:
    """Map each factor (column of ``C``) to a distinct latent (row) maximizing the summed weight.

    Solved as a minimum-cost assignment on ``max(C) - C``. Among optimal
    assignments, factor 0 gets the lowest possible latent index, then factor 1,
    and so on.
    """
    C = np.asarray(C, dtype=np.float64)
    L, J = C.shape
    if L < J:
        raise MetricError(f"{L} latents cannot cover {J} factors")
    cost = (C.max() - C).T  # factors x latents
    _, best = min_cost_assignment(cost)
    tol = rtol * max(1.0, abs(best), float(np.abs(cost).max()) * J)

    fixed: dict[int, int] = {}
    fixed_cost = 0.0
    for j in range(J):
        rest_rows = [r for r in range(j + 1, J)]
        for latent in range(L):
            if latent in fixed.values():
                continue
            free_cols = [c for c in range(L) if c != latent and c not in fixed.values()]
            sub = cost[np.ix_(rest_rows, free_cols)]
            _, rest = min_cost_assignment(sub)
            if fixed_cost + cost[j, latent] + rest <= best + tol:
                fixed[j] = latent
                fixed_cost += cost[j, latent]
                break
        else:  # pragma: no cover - numerical safety net
            raise MetricError("tie-breaking failed to recover the optimum")
    return fixed
