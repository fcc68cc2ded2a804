"""Branch-and-bound enumeration of binary codes satisfying two-sided box constraints.

Finds every ``b in {0,1}^k`` with ``0 <= W[i] . b + o[i] <= 1`` for all
constraint rows ``i`` (up to ``feas_tol``). Used to shrink the candidate pool
of the vertex enumeration before the exact {0,1} check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import _as_2d

DEFAULT_FEAS_TOL = 1e-7
DEFAULT_MAX_POOL = 1 << 20


@dataclass
class BoxFeasibilityProblem:
    weights: np.ndarray  # (q, k)
    offsets: np.ndarray  # (q,)

    def __post_init__(self):
        self.weights = _as_2d(self.weights)
        self.offsets = np.asarray(self.offsets, dtype=float).ravel()
        if self.weights.shape[0] != self.offsets.size:
            raise ValueError("weights and offsets need the same number of rows")

    @property
    def n_vars(self):
        return self.weights.shape[1]

    @classmethod
    def from_lifting(cls, lifting):
        free = lifting.free_rows()
        return cls(lifting.Z[free], lifting.offset[free])


@dataclass
class SolutionPool:
    codes: np.ndarray
    nodes_explored: int = 0
    truncated: bool = False

    def __len__(self):
        return int(self.codes.size)


def solve_box_feasibility(problem, feas_tol=DEFAULT_FEAS_TOL, max_pool=DEFAULT_MAX_POOL):
    """Depth-first branch and bound over the binary variables of ``problem``.

    Variables are fixed in order of decreasing total absolute weight. At each
    node every constraint carries its fixed partial sum plus the least and
    greatest contribution still reachable from the unfixed variables; a child
    is discarded only when that interval misses ``[-feas_tol, 1 + feas_tol]``
    for some constraint. The child keeping more constraint midpoints inside
    ``[0, 1]`` is explored first.

    If more than ``max_pool`` feasible codes exist the search stops and the
    pool is returned with ``truncated=True``.
    """
    if max_pool < 1:
        raise ValueError("max_pool must be >= 1")
    W = problem.weights
    o = problem.offsets
    k = W.shape[1]
    if k < 1:
        raise ValueError("need at least one variable")
    lo_band, hi_band = -feas_tol, 1.0 + feas_tol

    order = np.argsort(-np.abs(W).sum(axis=0), kind="stable")
    Wo = W[:, order]
    pos = np.maximum(Wo, 0.0)
    neg = np.minimum(Wo, 0.0)
    q = W.shape[0]
    # rest_hi[d] / rest_lo[d]: extreme contribution of variables d.. in branching order
    rest_hi = np.zeros((k + 1, q))
    rest_lo = np.zeros((k + 1, q))
    for d in range(k - 1, -1, -1):
        rest_hi[d] = rest_hi[d + 1] + pos[:, d]
        rest_lo[d] = rest_lo[d + 1] + neg[:, d]

    codes = []
    nodes = 0
    truncated = False

    lo0, hi0 = o + rest_lo[0], o + rest_hi[0]
    if (lo0 > hi_band).any() or (hi0 < lo_band).any():
        return SolutionPool(np.empty(0, dtype=np.int64), 1, False)

    stack = [(0, o.copy(), 0)]
    while stack:
        depth, partial, code = stack.pop()
        nodes += 1
        if depth == k:
            if len(codes) >= max_pool:
                truncated = True
                break
            codes.append(code)
            continue
        col = Wo[:, depth]
        children = []
        for value in (0, 1):
            s = partial + col if value else partial
            lo = s + rest_lo[depth + 1]
            hi = s + rest_hi[depth + 1]
            if (lo > hi_band).any() or (hi < lo_band).any():
                continue
            mid = 0.5 * (lo + hi)
            score = int(np.count_nonzero((mid >= 0.0) & (mid <= 1.0)))
            child_code = code | (value << int(order[depth]))
            children.append((score, -value, depth + 1, s, child_code))
        # stack is LIFO: push the preferred child last
        children.sort(key=lambda c: (c[0], c[1]))
        for _, _, d, s, c in children:
            stack.append((d, s, c))

    pool = np.array(sorted(codes), dtype=np.int64)
    return SolutionPool(pool, nodes, truncated)
