"""Factorization drivers for ``D ~ T A`` with binary ``T``.

Exact recovery goes through vertex enumeration (affine hull, span, or both
sides for the three-way model ``D = T W A'``). The noisy case ranks all
candidates by their distance to the nearest binary vector, optionally over
several anchor-row draws, and can be polished by alternating minimization.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import AmbiguousSelection, DegenerateRows, NoExactFactorization
from .linalg import (
    _as_2d,
    least_squares,
    numerical_rank,
    simplex_least_squares,
    truncated_svd,
)
from .vertices import (
    DEFAULT_CAP,
    DEFAULT_TOL_BINARY,
    LiftingMap,
    build_lifting,
    code_bits,
    code_values,
    enumerate_vertices,
)

log = logging.getLogger(__name__)

EXACT_RTOL = 1e-6
MAX_ROW_COND = 1e8
ROW_RETRIES = 50
SUBSET_BUDGET = 1000
MAX_EXHAUSTIVE_R = 24
_BLOCK_ELEMS = 1 << 22

REFINEMENTS = ("none", "best_fit", "backward_elim")
A_CONSTRAINTS = ("free", "simplex")


@dataclass
class FactorModel:
    """Result of a factorization.

    ``T`` is stored as a {0,1} int8 matrix. The model reconstructs ``D`` as
    ``levels(T) @ A`` where ``levels(T) = lo + (hi - lo) * T``, or as
    ``T @ W @ A.T`` when ``W`` is present (three-way model, ``A`` binary).
    """

    T: np.ndarray
    A: np.ndarray
    W: np.ndarray | None = None
    a_constraint: str = "free"
    residual_fro: float = 0.0
    levels: tuple = (0.0, 1.0)
    diagnostics: dict = field(default_factory=dict)

    def reconstruction(self):
        if self.W is not None:
            return self.T @ self.W @ self.A.T
        return apply_levels(self.T, self.levels) @ self.A

    def residual(self, D):
        return float(np.linalg.norm(_as_2d(D) - self.reconstruction()))

    @property
    def r(self):
        return self.T.shape[1]


@dataclass
class ApproxConfig:
    r: int
    restarts_s: int = 1
    refine: str = "best_fit"
    polish_block_iters: int = 0
    binary_levels: tuple = (0.0, 1.0)
    seed: int = 0
    a_constraint: str = "free"

    def __post_init__(self):
        self.binary_levels = tuple(float(x) for x in self.binary_levels)
        lo, hi = self.binary_levels
        if not lo < hi:
            raise ValueError("binary_levels must satisfy lo < hi")
        if self.restarts_s < 1:
            raise ValueError("restarts_s must be >= 1")
        if self.r < 2:
            raise ValueError("r must be >= 2")
        if self.refine not in REFINEMENTS:
            raise ValueError(f"refine must be one of {REFINEMENTS}")
        if self.a_constraint not in A_CONSTRAINTS:
            raise ValueError(f"a_constraint must be one of {A_CONSTRAINTS}")
        if self.polish_block_iters < 0:
            raise ValueError("polish_block_iters must be >= 0")


def apply_levels(T, levels=(0.0, 1.0)):
    lo, hi = levels
    T = np.asarray(T, dtype=float)
    if lo == 0.0 and hi == 1.0:
        return T
    return lo + (hi - lo) * T


def substream_seed(seed, index):
    """Integer seed for the ``index``-th independent substream of ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def _greedy_independent(V, r, affine):
    """First ``r`` columns of ``V`` (in order) that are affinely/linearly independent."""
    chosen = []
    for j in range(V.shape[1]):
        trial = chosen + [j]
        M = V[:, trial].astype(float)
        if affine:
            M = np.vstack([np.ones((1, len(trial))), M])
        if numerical_rank(M) == len(trial):
            chosen = trial
            if len(chosen) == r:
                break
    return chosen


def _exact_tol(D):
    return EXACT_RTOL * max(float(np.linalg.norm(D)), np.finfo(float).tiny)


def _affine_fit(T, D):
    """Solve ``[1'; T] A = [1'; D]`` in the least-squares sense."""
    r, n = T.shape[1], D.shape[1]
    M = np.vstack([np.ones((1, r)), T])
    rhs = np.vstack([np.ones((1, n)), D])
    return least_squares(M, rhs)


def factorize_exact(
    D,
    mode="affine",
    tol_binary=DEFAULT_TOL_BINARY,
    pruning="incremental",
    cap=DEFAULT_CAP,
    subset_budget=SUBSET_BUDGET,
):
    """Exact factorization ``D = T A`` with binary ``T``.

    ``mode="affine"`` requires the columns of ``A`` to sum to one,
    ``"linear"`` leaves ``A`` free, and ``"simplex"`` additionally requires
    ``A >= 0``. The rank is inferred from the data.

    When more than ``r`` vertices lie in the hull, affine/linear modes pick the
    first independent ones in code order; simplex mode searches up to
    ``subset_budget`` subsets for one admitting nonnegative weights.
    """
    D = _as_2d(D)
    if mode not in ("affine", "linear", "simplex"):
        raise ValueError(f"unknown mode {mode!r}")
    lift_mode = "span" if mode == "linear" else "affine"
    lifting = build_lifting(D, "auto", lift_mode)
    r = lifting.n_bits + (1 if lift_mode == "affine" else 0)
    V = enumerate_vertices(lifting, tol_binary, pruning, cap)
    tol = _exact_tol(D)
    diag = {"vertex_count": len(V), "rank": r}
    if r == 0:
        raise NoExactFactorization("D is zero; no components to recover")

    if mode == "simplex" and len(V) > r:
        T, A, checked = _simplex_subset_search(D, V.vertices, r, tol, subset_budget)
        diag["subsets_checked"] = checked
    else:
        chosen = _greedy_independent(V.vertices, r, affine=(mode != "linear"))
        if len(chosen) < r:
            raise NoExactFactorization(
                f"found {len(V)} vertices but only {len(chosen)} independent ones, need {r}"
            )
        T = V.vertices[:, chosen]
        Tf = T.astype(float)
        if mode == "linear":
            A = least_squares(Tf, D)
        elif mode == "affine":
            A = _affine_fit(Tf, D)
        else:
            A = simplex_least_squares(Tf, D)

    res = float(np.linalg.norm(D - T.astype(float) @ A))
    if res > tol:
        raise NoExactFactorization(f"best residual {res:.3e} exceeds {tol:.3e}")
    constraint = {"linear": "free", "affine": "affine", "simplex": "simplex"}[mode]
    return FactorModel(T, A, None, constraint, res, (0.0, 1.0), diag)


def _simplex_subset_search(D, V, r, tol, budget):
    scored = []
    for combo in itertools.islice(itertools.combinations(range(V.shape[1]), r), budget):
        Tc = V[:, combo].astype(float)
        M = np.vstack([np.ones((1, r)), Tc])
        if numerical_rank(M) < r:
            continue
        Ac = _affine_fit(Tc, D)
        res = float(np.linalg.norm(D - Tc @ Ac))
        negative = float(-np.minimum(Ac, 0.0).sum())
        scored.append((res > tol, negative, combo))
    # exact affine fits first, then least total negative weight
    scored.sort(key=lambda x: (x[0], x[1]))
    for checked, (_, _, combo) in enumerate(scored, start=1):
        Tc = V[:, combo]
        A = simplex_least_squares(Tc.astype(float), D)
        if np.linalg.norm(D - Tc @ A) <= tol:
            return Tc, A, checked
    raise AmbiguousSelection(
        f"no simplex-feasible subset among {len(scored)} candidates (budget {budget})"
    )


def factorize_three_way(D, r="auto", tol_binary=DEFAULT_TOL_BINARY, pruning="incremental"):
    """Exact ``D = T W A'`` with binary ``T`` (m x r), binary ``A`` (n x r), real ``W``."""
    D = _as_2d(D)
    left = build_lifting(D, r, "span")
    right = build_lifting(D.T, r, "span")
    r = left.n_bits
    if r == 0:
        raise NoExactFactorization("D is zero")
    VT = enumerate_vertices(left, tol_binary, pruning)
    VA = enumerate_vertices(right, tol_binary, pruning)
    ct = _greedy_independent(VT.vertices, r, affine=False)
    ca = _greedy_independent(VA.vertices, r, affine=False)
    if len(ct) < r or len(ca) < r:
        raise NoExactFactorization("not enough independent binary vectors in the spans of D")
    T = VT.vertices[:, ct]
    A = VA.vertices[:, ca]
    # W = (T'T)^-1 T' D A (A'A)^-1
    right_part = least_squares(A.astype(float), D.T).T
    W = least_squares(T.astype(float), right_part)
    res = float(np.linalg.norm(D - T @ W @ A.T))
    if res > _exact_tol(D):
        raise NoExactFactorization(f"residual {res:.3e} too large")
    diag = {"vertex_count": len(VT), "vertex_count_right": len(VA), "rank": r}
    return FactorModel(T, A, W, "free", res, (0.0, 1.0), diag)


def approximate_lifting(
    D,
    r,
    row_seed=None,
    subset_fraction=0.5,
    max_cond=MAX_ROW_COND,
    retries=ROW_RETRIES,
):
    """Lifting map built from the leading ``r - 1`` left singular vectors of centred ``D``.

    Anchor rows come from pivoted QR on the transposed basis. With
    ``row_seed=None`` all rows compete; otherwise a random subset of
    ``max(r - 1, ceil(subset_fraction * m))`` rows is drawn from a generator
    seeded with ``row_seed`` and the pivots are taken inside it
    (``subset_fraction=0`` therefore means uniformly random anchor rows).
    Anchor blocks with condition number above ``max_cond`` are redrawn, at
    most ``retries`` times.
    """
    D = _as_2d(D)
    m, n = D.shape
    if r < 2:
        raise ValueError("r must be >= 2")
    k = r - 1
    if k > min(m, n):
        raise ValueError(f"r - 1 = {k} exceeds min(m, n) = {min(m, n)}")
    p = D.mean(axis=1)
    P = D - p[:, None]
    U = truncated_svd(P, k).basis

    def pivot_rows(candidates):
        _, perm = scipy.linalg.qr(U[candidates].T, mode="r", pivoting=True)
        return np.sort(candidates[perm[:k]])

    if row_seed is None:
        rows = pivot_rows(np.arange(m))
        if np.linalg.cond(U[rows]) > max_cond:
            raise DegenerateRows("pivoted anchor rows are ill-conditioned")
    else:
        rng = _rng(row_seed)
        size = min(m, max(k, int(np.ceil(subset_fraction * m))))
        for _ in range(retries):
            subset = np.sort(rng.choice(m, size=size, replace=False))
            rows = pivot_rows(subset)
            if np.linalg.cond(U[rows]) <= max_cond:
                break
        else:
            raise DegenerateRows(f"no well-conditioned row subset after {retries} draws")
    Z = np.linalg.solve(U[rows].T, U.T).T
    Z[rows] = np.eye(k)
    return LiftingMap(Z, p, rows, "affine")


def rounding_distances(lifting, levels=(0.0, 1.0)):
    """Squared distance of every lifted candidate to its rounding onto ``levels``.

    Anchor rows sit exactly on a level and contribute nothing. Returns an
    array indexed by code.
    """
    lo, hi = levels
    mid = 0.5 * (lo + hi)
    Z, offset = lifting.Z, lifting.offset
    W = (hi - lo) * Z
    const = lo * Z.sum(axis=1) + offset
    free = lifting.free_rows()
    codes = np.arange(1 << lifting.n_bits, dtype=np.int64)
    d2 = np.zeros(codes.size)
    block = max(1, _BLOCK_ELEMS // codes.size)
    for start in range(0, free.size, block):
        rb = free[start : start + block]
        vals = code_values(W[rb], const[rb], codes)
        nearest = np.where(vals > mid, hi, lo)
        d2 += ((vals - nearest) ** 2).sum(axis=0)
    return d2


def _round_codes(lifting, codes, levels):
    lo, hi = levels
    mid = 0.5 * (lo + hi)
    W = (hi - lo) * lifting.Z
    const = lo * lifting.Z.sum(axis=1) + lifting.offset
    free = lifting.free_rows()
    out = np.zeros((lifting.m, len(codes)), dtype=np.int8)
    vals = code_values(W[free], const[free], codes)
    out[free] = (vals > mid).astype(np.int8)
    out[lifting.anchor_rows] = code_bits(codes, lifting.n_bits).T.astype(np.int8)
    return out


def _approximate_candidates(D, r, row_seed=None, levels=(0.0, 1.0), pool=None):
    lifting = approximate_lifting(D, r, row_seed)
    d2 = rounding_distances(lifting, levels)
    codes = np.arange(d2.size, dtype=np.int64)
    order = np.lexsort((codes, d2))
    want = r if pool is None else pool
    picked, seen = [], set()
    for start in range(0, order.size, 4 * want):
        chunk = order[start : start + 4 * want]
        cols = _round_codes(lifting, chunk, levels)
        for j, u in enumerate(chunk):
            key = cols[:, j].tobytes()
            if key in seen:
                continue
            seen.add(key)
            picked.append((int(u), cols[:, j]))
            if len(picked) == want:
                break
        if len(picked) == want:
            break
    if len(picked) < r:
        raise DegenerateRows(f"only {len(picked)} distinct rounded candidates, need {r}")
    T = np.stack([c for _, c in picked], axis=1)
    sel = np.array([u for u, _ in picked], dtype=np.int64)
    return T, sel, np.sqrt(d2[sel]), lifting


def find_vertices_approximate(D, r, row_seed=None, levels=(0.0, 1.0)):
    """The ``r`` candidate columns closest to binary, rounded at the midpoint.

    Parameters
    ----------
    D : (m, n) array
    r : int
        Number of components, ``r >= 2``.
    row_seed : int or None
        None selects anchor rows by pivoted QR; an integer draws them at random.
    levels : (lo, hi)
        Binary levels the candidates are compared against.

    Returns
    -------
    (m, r) int8 array with columns ordered by increasing rounding distance.
    """
    return _approximate_candidates(D, r, row_seed, levels)[0]


def _fit(T, D, levels, a_constraint="free"):
    F = apply_levels(T, levels)
    if a_constraint == "simplex":
        return simplex_least_squares(F, D)
    return least_squares(F, D)


def _fit_residual(T, D, levels):
    F = apply_levels(T, levels)
    return float(np.linalg.norm(D - F @ least_squares(F, D)))


def _column_key(col):
    return np.packbits(np.asarray(col, dtype=np.uint8)).tobytes()


def backward_eliminate(D, pool, r, levels=(0.0, 1.0), max_cond=1e10):
    """Greedily drop pool columns until ``r`` remain.

    Each step removes the column whose removal leaves the smallest
    least-squares residual; ties drop the column with the larger bit pattern.
    Returns the indices of the kept columns in pool order.

    With ``G = F'F`` the Gram matrix of the kept (level-mapped) columns and
    ``X = G^-1 F'D`` their coefficients, dropping column ``j`` raises the
    squared residual by ``sum(X[j]**2) / (G^-1)[j, j]``. That downdate is used
    while ``G`` is well conditioned; otherwise each removal is refit directly.
    """
    D = _as_2d(D)
    F = apply_levels(pool, levels)
    G = F.T @ F
    H = F.T @ D
    keep = list(range(pool.shape[1]))
    keys = [_column_key(pool[:, j]) for j in keep]
    while len(keep) > r:
        Gk = G[np.ix_(keep, keep)]
        if np.linalg.cond(Gk) <= max_cond:
            Ginv = np.linalg.inv(Gk)
            X = Ginv @ H[keep]
            scores = (X**2).sum(axis=1) / np.diag(Ginv)
        else:
            scores = []
            for j in keep:
                rest = [c for c in keep if c != j]
                scores.append(_fit_residual(pool[:, rest], D, levels))
        best = None
        for pos, j in enumerate(keep):
            sc = scores[pos]
            if best is None or sc < best[0] or (sc == best[0] and keys[j] > keys[best[1]]):
                best = (sc, j)
        keep.remove(best[1])
    return keep


def factorize_approximate(D, cfg):
    """Approximate binary factorization driven by candidate rounding.

    Restart ``l = 0`` uses pivoted anchor rows; restarts ``l >= 1`` draw them
    at random from substreams of ``cfg.seed``. ``refine="none"`` keeps the
    first restart only, ``"best_fit"`` keeps the restart whose ``T`` fits
    ``D`` best, and ``"backward_elim"`` merges all restarts into one pool and
    prunes it down to ``r`` columns. Optional block-descent polish follows,
    then ``A`` is refit (least squares, or simplex-constrained).
    """
    D = _as_2d(D)
    levels = cfg.binary_levels
    n_runs = 1 if cfg.refine == "none" else cfg.restarts_s
    runs = []
    for l in range(n_runs):
        row_seed = None if l == 0 else substream_seed(cfg.seed, l)
        try:
            T_l = _approximate_candidates(D, cfg.r, row_seed, levels)[0]
        except DegenerateRows:
            if l == 0:
                raise
            log.info("restart %d skipped: degenerate anchor rows", l)
            continue
        runs.append(T_l)

    diag = {"restarts_used": len(runs), "refine": cfg.refine}
    if cfg.refine == "backward_elim" and len(runs) > 1:
        pool, seen = [], set()
        for T_l in runs:
            for col in T_l.T:
                key = col.tobytes()
                if key not in seen:
                    seen.add(key)
                    pool.append(col)
        pool = np.stack(pool, axis=1)
        kept = backward_eliminate(D, pool, cfg.r, levels)
        T = pool[:, kept]
        diag["pool_size"] = pool.shape[1]
    else:
        fits = [_fit_residual(T_l, D, levels) for T_l in runs]
        best = int(np.argmin(fits))
        T = runs[best]
        diag["best_restart"] = best
        diag["restart_residuals"] = fits

    if cfg.polish_block_iters > 0:
        polished = block_descent(D, T, cfg.polish_block_iters, levels)
        T = polished.T
        diag["polish_iterations"] = polished.diagnostics["iterations"]

    A = _fit(T, D, levels, cfg.a_constraint)
    res = float(np.linalg.norm(D - apply_levels(T, levels) @ A))
    return FactorModel(T, A, None, cfg.a_constraint, res, levels, diag)


def update_T_rows(D, A, levels=(0.0, 1.0)):
    """Row-wise exhaustive minimization of ``||D - levels(T) A||_F`` over binary ``T``.

    Every row of ``T`` is chosen independently among the ``2**r`` binary
    vectors; ties go to the smaller code (bit ``k`` = column ``k``).
    """
    D = _as_2d(D)
    A = _as_2d(A)
    r = A.shape[0]
    if r > MAX_EXHAUSTIVE_R:
        raise ValueError(f"exhaustive row update limited to r <= {MAX_EXHAUSTIVE_R}")
    if A.shape[1] != D.shape[1]:
        raise ValueError("A and D must have the same number of columns")
    lo, hi = levels
    # levels(t) A = lo 1'A + (hi - lo) t A
    Dp = D - lo * A.sum(axis=0)[None, :] if lo != 0.0 else D
    Ap = (hi - lo) * A if hi - lo != 1.0 else A
    G = Ap @ Ap.T
    H = Dp @ Ap.T  # (m, r)
    m = D.shape[0]

    best_val = np.full(m, np.inf)
    best_code = np.zeros(m, dtype=np.int64)
    total = 1 << r
    step = max(1, min(total, _BLOCK_ELEMS // max(1, m)))
    for start in range(0, total, step):
        codes = np.arange(start, min(total, start + step), dtype=np.int64)
        B = code_bits(codes, r)
        quad = np.einsum("ij,jk,ik->i", B, G, B)
        obj = quad[:, None] - 2.0 * (B @ H.T)
        idx = np.argmin(obj, axis=0)
        val = obj[idx, np.arange(m)]
        better = val < best_val
        best_val[better] = val[better]
        best_code[better] = codes[idx[better]]
    return code_bits(best_code, r).astype(np.int8)


def block_descent(D, T0, max_iter=50, levels=(0.0, 1.0)):
    """Alternate least-squares ``A`` updates with exhaustive row updates of ``T``.

    Stops after ``max_iter`` sweeps or once a sweep leaves ``T`` unchanged.
    ``diagnostics["objective"]`` holds ``||D - levels(T_k) A_k||_F^2`` for
    every iterate.
    """
    D = _as_2d(D)
    T = np.asarray(T0).astype(np.int8)
    A = least_squares(apply_levels(T, levels), D)
    history = [float(np.linalg.norm(D - apply_levels(T, levels) @ A) ** 2)]
    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        T_new = update_T_rows(D, A, levels)
        if np.array_equal(T_new, T):
            converged = True
            break
        T = T_new
        A = least_squares(apply_levels(T, levels), D)
        history.append(float(np.linalg.norm(D - apply_levels(T, levels) @ A) ** 2))
    res = float(np.sqrt(history[-1]))
    diag = {"iterations": iterations, "objective": history, "converged": converged}
    return FactorModel(T, A, None, "free", res, tuple(levels), diag)
