"""Exact multiple-choice knapsack solver over per-arm values.

Each ad line is a group offering one item per budget level (level 0 always
worth exactly 0); the shared capacity is the number of grid units.  The
solver picks exactly one level per group, total units at most the capacity,
maximizing total value.  Ties are broken deterministically: first smaller
total spend, then the lexicographically smallest level vector.

``solve`` is an O(K * N^2) dynamic program; ``solve_bruteforce`` enumerates
all feasible level vectors with the identical tie-break and serves as the
test oracle.  Both accumulate values in the same association order so that
agreement is exact, not approximate.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

__all__ = ["ValueTable", "solve", "solve_bruteforce"]

_BRUTE_FORCE_LIMIT = 10**6


@dataclass(frozen=True)
class ValueTable:
    """Per-level values for one campaign: rows are ad lines, column ``n`` is
    the value of spending ``n`` units.  Column 0 must be exactly 0."""

    values: np.ndarray
    capacity: int

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 2:
            raise ValueError("values must be K x (N+1) with K >= 1, N >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if np.any(v[:, 0] != 0.0):
            raise ValueError("zero-budget column must be exactly 0")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")

    @classmethod
    def from_values(cls, values: np.ndarray, capacity: int | None = None) -> "ValueTable":
        v = np.asarray(values, dtype=float)
        return cls(v, v.shape[1] - 1 if capacity is None else capacity)

    @property
    def n_groups(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_levels(self) -> int:
        return int(self.values.shape[1] - 1)


def solve(table: ValueTable) -> tuple[int, ...]:
    """Optimal level per group under the shared capacity.

    Groups are processed back to front so the lexicographic tie-break is
    resolved at the first group during backtracking: within each cell,
    candidates are scanned in increasing level order and replaced only on a
    strict improvement of (value, -spend).
    """
    v = table.values
    K, N = table.n_groups, table.n_levels
    cap = table.capacity
    max_level = min(N, cap)

    # best[k][b]: (value, spend) achievable by groups k..K-1 within budget b
    value = np.zeros((K + 1, cap + 1))
    spend = np.zeros((K + 1, cap + 1), dtype=np.int64)
    choice = np.zeros((K, cap + 1), dtype=np.int64)
    for k in range(K - 1, -1, -1):
        for b in range(cap + 1):
            best_val = v[k, 0] + value[k + 1, b]
            best_spend = spend[k + 1, b]
            best_n = 0
            for n in range(1, min(max_level, b) + 1):
                val = v[k, n] + value[k + 1, b - n]
                sp = n + spend[k + 1, b - n]
                if val > best_val or (val == best_val and sp < best_spend):
                    best_val, best_spend, best_n = val, sp, n
            value[k, b] = best_val
            spend[k, b] = best_spend
            choice[k, b] = best_n

    levels = []
    b = cap
    for k in range(K):
        n = int(choice[k, b])
        levels.append(n)
        b -= n
    return tuple(levels)


def solve_bruteforce(table: ValueTable) -> tuple[int, ...]:
    """Exhaustive reference with the same contract and tie-break as ``solve``.

    Refuses instances with more than 10^6 candidate vectors.
    """
    K, N = table.n_groups, table.n_levels
    cap = table.capacity
    if (N + 1) ** K > _BRUTE_FORCE_LIMIT:
        raise ValueError(f"instance too large to enumerate: (N+1)^K = {(N + 1) ** K}")
    v = table.values
    best: tuple[float, int, tuple[int, ...]] | None = None
    for levels in product(range(min(N, cap) + 1), repeat=K):
        sp = sum(levels)
        if sp > cap:
            continue
        # accumulate back to front, matching the DP's association order
        val = 0.0
        for k in range(K - 1, -1, -1):
            val = v[k, levels[k]] + val
        key = (-val, sp, levels)
        if best is None or key < best:
            best = key
    assert best is not None
    return best[2]
