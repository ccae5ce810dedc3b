"""Rectangular minimum-cost assignment with forbidden (+inf) pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vistrack._kernels import hungarian

__all__ = ["AssignmentResult", "solve_assignment"]


@dataclass(frozen=True)
class AssignmentResult:
    pairs: tuple[tuple[int, int], ...]  # sorted by row
    total_cost: float

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)


def solve_assignment(cost) -> AssignmentResult:
    """Optimal assignment on an n x m cost matrix.

    ``+inf`` marks a forbidden pair.  Among assignments using the largest
    possible number of allowed pairs, the one with minimum total cost is
    returned; rows left without an allowed partner stay unmatched.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError(f"cost matrix must be non-empty 2-D, got shape {cost.shape}")
    if np.isnan(cost).any() or np.isneginf(cost).any():
        raise ValueError("cost matrix must not contain NaN or -inf")

    allowed = np.isfinite(cost)
    if not allowed.any():
        return AssignmentResult((), 0.0)

    finite = cost[allowed]
    # shift to non-negative, then price a forbidden edge above any allowed total
    work = np.where(allowed, cost - finite.min(), 0.0)
    big = 2.0 * float(work.sum()) + 1.0
    work[~allowed] = big

    transposed = work.shape[0] > work.shape[1]
    if transposed:
        work = work.T
    col_of_row = hungarian(np.ascontiguousarray(work))

    pairs = []
    for r, c in enumerate(col_of_row):
        i, j = (int(c), r) if transposed else (r, int(c))
        if allowed[i, j]:
            pairs.append((i, j))
    pairs.sort()
    total = float(sum(cost[i, j] for i, j in pairs))
    return AssignmentResult(tuple(pairs), total)
