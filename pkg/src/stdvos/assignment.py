"""Exact bipartite assignment with a deterministic tie-break.

`scipy.optimize.linear_sum_assignment` finds *an* optimum; the callers here
(set-prediction matching, track association, metric assignment) need *the*
canonical optimum so reruns are reproducible. Among all optimal assignments
we return the one whose column sequence, read in row order, is
lexicographically smallest.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

_REL_TOL = 1e-9


def _optimum(cost: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum()), rows, cols


def _canonical(cost: np.ndarray) -> list[tuple[int, int]]:
    # requires n_rows <= n_cols so every row is assigned
    n, m = cost.shape
    best, rows, cols = _optimum(cost)
    tol = _REL_TOL * max(1.0, abs(best))
    current = dict(zip(rows.tolist(), cols.tolist()))
    fixed: dict[int, int] = {}
    for i in range(n):
        used = set(fixed.values())
        for j in range(current[i]):
            if j in used:
                continue
            rest_rows = [r for r in range(i + 1, n)]
            rest_cols = [c for c in range(m) if c not in used and c != j]
            partial = sum(cost[r, c] for r, c in fixed.items()) + cost[i, j]
            if rest_rows:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                sub_val, sr, sc = _optimum(sub)
            else:
                sub_val, sr, sc = 0.0, np.array([], int), np.array([], int)
            if partial + sub_val <= best + tol:
                current = dict(fixed)
                current[i] = j
                for a, b in zip(sr.tolist(), sc.tolist()):
                    current[rest_rows[a]] = rest_cols[b]
                break
        fixed[i] = current[i]
    return sorted(fixed.items())


def solve_assignment(cost, forbidden=None, maximize: bool = False) -> list[tuple[int, int]]:
    """Minimum-cost (or maximum-score) injective assignment.

    Returns ``(row, col)`` pairs sorted by row. ``min(n_rows, n_cols)`` pairs
    are assigned, then pairs falling on ``forbidden`` entries are dropped.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite; use `forbidden` for gating")
    work = -cost if maximize else cost.copy()
    if forbidden is not None:
        forbidden = np.asarray(forbidden, dtype=bool)
        big = (np.abs(work).max() + 1.0) * (min(work.shape) + 1)
        work = np.where(forbidden, big, work)
    if work.shape[0] <= work.shape[1]:
        pairs = _canonical(work)
    else:
        pairs = sorted((r, c) for c, r in _canonical(work.T))
    if forbidden is not None:
        pairs = [(r, c) for r, c in pairs if not forbidden[r, c]]
    return pairs
