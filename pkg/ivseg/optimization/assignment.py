"""
Minimum-cost one-to-one assignment of mask proposals to ground-truth targets.

The solver is the O(n³) shortest augmenting path formulation of the Hungarian
method with row and column potentials. Rectangular cost matrices are padded to
a square one with zero-cost dummy rows or columns, which never change the
optimal real pairs.
"""

import dataclasses

import numpy as np


@dataclasses.dataclass
class Assignment:
    pairs: list  # [(proposal j, target g), ...] sorted by j
    n_proposals: int
    n_targets: int

    def labels(self):
        """
        1 for assigned proposals, 0 for "no target"
        """
        out = np.zeros(self.n_proposals)

        for j, _ in self.pairs:
            out[j] = 1.0

        return out

    def total_cost(self, cost):
        return float(sum(cost[j, g] for j, g in self.pairs))


def _hungarian_square(cost):
    """
    Returns `assignment[row] = column` for a square matrix
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row assigned to column j, 1-based
    way = np.zeros(n + 1, dtype=np.int64)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)

        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0

            for j in range(1, n + 1):
                if not used[j]:
                    reduced = cost[i0 - 1, j - 1] - u[i0] - v[j]

                    if reduced < minv[j]:
                        minv[j] = reduced
                        way[j] = j0

                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j

            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta

            j0 = j1

            if p[j0] == 0:
                break

        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    assignment = np.full(n, -1, dtype=np.int64)

    for j in range(1, n + 1):
        assignment[p[j] - 1] = j - 1

    return assignment


def hungarian_assign(cost) -> Assignment:
    """
    `cost` is `[N proposals, G targets]`; returns min(N, G) pairs
    """
    cost = np.asarray(cost, dtype=np.float64)

    if cost.ndim != 2:
        raise ValueError(f"Cost must be a matrix, got shape {cost.shape}")

    if not np.all(np.isfinite(cost)):
        raise ValueError("Cost matrix holds non-finite entries")

    n_proposals, n_targets = cost.shape

    if n_proposals == 0 or n_targets == 0:
        return Assignment([], n_proposals, n_targets)

    if n_targets == 1:
        return Assignment([(int(np.argmin(cost[:, 0])), 0)], n_proposals, n_targets)

    n = max(n_proposals, n_targets)
    square = np.zeros((n, n))
    square[:n_proposals, :n_targets] = cost
    columns = _hungarian_square(square)
    pairs = [(j, int(columns[j])) for j in range(n_proposals) if columns[j] < n_targets]

    return Assignment(sorted(pairs), n_proposals, n_targets)
