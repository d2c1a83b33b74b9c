"""Minimum-cost bipartite assignment of ground-truth boxes to object queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class MatchAssignment:
    """Injective row -> column assignment; pairs are (gt_index, query_index)."""

    pairs: list[tuple[int, int]]
    total_cost: float


def hungarian(cost: torch.Tensor | np.ndarray) -> MatchAssignment:
    """Solve the rectangular assignment problem (rows g <= columns m).

    Shortest-augmenting-path formulation with row/column potentials; handles
    negative costs. O(g * m^2).
    """
    c = np.asarray(cost.detach() if isinstance(cost, torch.Tensor) else cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    g, m = c.shape
    if g > m:
        raise ValueError(f"need at least as many columns as rows, got {g}x{m}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix must be finite")

    u = np.zeros(g + 1)
    v = np.zeros(m + 1)
    col_to_row = np.zeros(m + 1, dtype=np.int64)  # 0 = unassigned
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, g + 1):
        col_to_row[0] = i
        j0 = 0
        minv = np.full(m + 1, math.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_to_row[j0]
            reduced = c[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free)[0]
            j1 = cand[np.argmin(minv[1:][cand])] + 1
            delta = minv[j1]
            u[col_to_row[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if col_to_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_to_row[j0] = col_to_row[j1]
            j0 = j1

    pairs = sorted((int(col_to_row[j] - 1), j - 1) for j in range(1, m + 1) if col_to_row[j])
    total = float(sum(c[r, q] for r, q in pairs))
    return MatchAssignment(pairs=pairs, total_cost=total)
