"""Ranked (k-best) linear assignment by Murty's partitioning."""

from __future__ import annotations

import heapq
from itertools import count

import numpy as np
from scipy.optimize import linear_sum_assignment


def _solve(cost: np.ndarray, forced: dict[int, int], forbidden: frozenset) -> tuple[np.ndarray, float] | None:
    n_rows, n_cols = cost.shape
    c = cost.copy()
    for r, col in forbidden:
        c[r, col] = np.inf
    free_rows = [r for r in range(n_rows) if r not in forced]
    used_cols = set(forced.values())
    free_cols = [col for col in range(n_cols) if col not in used_cols]
    assign = np.full(n_rows, -1, dtype=int)
    for r, col in forced.items():
        assign[r] = col
    if free_rows:
        if len(free_cols) < len(free_rows):
            return None
        sub = c[np.ix_(free_rows, free_cols)]
        try:
            rows, cols = linear_sum_assignment(sub)
        except ValueError:
            return None
        vals = sub[rows, cols]
        if not np.all(np.isfinite(vals)):
            return None
        for r, col in zip(rows, cols):
            assign[free_rows[r]] = free_cols[col]
    # canonical row-order sum so equal assignments report identical costs
    total = float(cost[np.arange(n_rows), assign].sum())
    return assign, total


def kbest_assignments(cost, k: int) -> list[tuple[np.ndarray, float]]:
    """The ``k`` cheapest complete row-to-column assignments.

    ``cost`` is (n_rows, n_cols) with n_rows <= n_cols; ``inf`` marks a
    forbidden pair. Each result is ``(cols, total)`` where ``cols[r]`` is the
    column given to row ``r``. Results come in nondecreasing cost order;
    an infeasible matrix yields an empty list.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] > cost.shape[1]:
        raise ValueError("cost must be a 2-d array with no more rows than columns")
    if k < 1:
        return []
    n_rows = cost.shape[0]
    if n_rows == 0:
        return [(np.zeros(0, dtype=int), 0.0)]
    first = _solve(cost, {}, frozenset())
    if first is None:
        return []
    tie = count()
    heap = [(first[1], next(tie), first[0], {}, frozenset())]
    out: list[tuple[np.ndarray, float]] = []
    while heap and len(out) < k:
        total, _, assign, forced, forbidden = heapq.heappop(heap)
        out.append((assign, total))
        if len(out) == k:
            break
        forced_now = dict(forced)
        for r in range(n_rows):
            if r in forced:
                continue
            sub_forbidden = forbidden | {(r, int(assign[r]))}
            sol = _solve(cost, forced_now, sub_forbidden)
            if sol is not None:
                heapq.heappush(heap, (sol[1], next(tie), sol[0], dict(forced_now), sub_forbidden))
            forced_now[r] = int(assign[r])
    return out
