"""Enumerate the {0,1}-vertices lying in the affine hull or linear span of data.

A candidate vertex is identified by a ``k``-bit code ``b`` holding its
coordinates on ``k`` anchor rows ``R``. The lifting map sends the code to the
full candidate column::

    t(b) = Z (b - p_R) + p = Z b + (p - Z p_R)

with ``Z[R] = I``, so anchor coordinates reproduce the code exactly and only
the remaining rows need checking. In affine mode ``k = r - 1`` and ``p`` is the
column mean of the data; in span mode ``k = r`` and ``p = 0``.

Candidate values are computed as the left-to-right sum ``sum_j Z[i, j] b_j``
(bits in increasing order) plus the row offset, whichever route produces them
(doubling table or direct accumulation). A given (row, code) pair therefore
always gets the same floating-point value, which makes the surviving code set
independent of the order in which rows are checked.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CandidateOverflow, RankMismatch
from .linalg import DEFAULT_RANK_TOL, _as_2d, select_pivots

log = logging.getLogger(__name__)

DEFAULT_TOL_BINARY = 1e-8
DEFAULT_CAP = 30
CHUNK_BITS = 20
_BLOCK_ELEMS = 1 << 22

PRUNING_MODES = ("full", "incremental", "ilp")


@dataclass
class LiftingMap:
    Z: np.ndarray
    origin: np.ndarray
    anchor_rows: np.ndarray
    mode: str = "affine"
    offset: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.Z = _as_2d(self.Z)
        self.origin = np.asarray(self.origin, dtype=float).ravel()
        self.anchor_rows = np.asarray(self.anchor_rows, dtype=np.intp).ravel()
        if self.mode not in ("affine", "span"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.anchor_rows.size != self.Z.shape[1]:
            raise ValueError("need one anchor row per code bit")
        if self.origin.size != self.Z.shape[0]:
            raise ValueError("origin length must match the rows of Z")
        if self.Z.shape[1]:
            self.offset = self.origin - self.Z @ self.origin[self.anchor_rows]
        else:
            self.offset = self.origin.copy()

    @property
    def n_bits(self):
        return self.Z.shape[1]

    @property
    def m(self):
        return self.Z.shape[0]

    def free_rows(self):
        mask = np.ones(self.m, dtype=bool)
        mask[self.anchor_rows] = False
        return np.flatnonzero(mask)

    def lift(self, codes, rows=None):
        """Candidate values ``t(b)`` for ``codes``; shape ``(len(rows), len(codes))``."""
        rows = np.arange(self.m) if rows is None else np.asarray(rows, dtype=np.intp)
        return code_values(self.Z[rows], self.offset[rows], codes)


@dataclass
class CandidateBatch:
    lifting: LiftingMap
    codes: np.ndarray
    checked_rows: tuple = ()

    def __len__(self):
        return int(self.codes.size)


@dataclass
class VertexSet:
    """Binary vertices stored as the columns of an ``m x s`` int8 matrix."""

    vertices: np.ndarray
    codes: np.ndarray

    def __len__(self):
        return int(self.codes.size)

    def as_set(self):
        return {tuple(int(x) for x in col) for col in self.vertices.T}


def code_bits(codes, k):
    """Bits of each code as a ``(len(codes), k)`` float array, bit 0 first."""
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[:, None] >> np.arange(k, dtype=np.int64)) & 1).astype(float)


def _doubling_table(W):
    # tab[:, u] = sum_j W[:, j] * bit_j(u), bits added in increasing j
    tab = np.zeros((W.shape[0], 1))
    for j in range(W.shape[1]):
        tab = np.concatenate([tab, tab + W[:, j : j + 1]], axis=1)
    return tab


def code_values(W, const, codes):
    """Evaluate ``W b + const`` for every code ``b``.

    Parameters
    ----------
    W : (q, k) array
    const : (q,) array
    codes : 1-D integer array of k-bit codes

    Returns
    -------
    (q, len(codes)) array
    """
    W = _as_2d(W)
    const = np.asarray(const, dtype=float).ravel()
    codes = np.asarray(codes, dtype=np.int64).ravel()
    q, k = W.shape
    s = codes.size
    if s == 0 or q == 0:
        return np.zeros((q, s))

    low = min(k, int(np.log2(s)))
    if low >= 4:
        tab = _doubling_table(W[:, :low])
        acc = tab[:, codes & ((1 << low) - 1)]
    else:
        low = 0
        acc = np.zeros((q, s))
    for j in range(low, k):
        bit = (codes >> j) & 1
        if not bit.any():
            continue
        acc += W[:, j : j + 1] * bit.astype(float)
    return acc + const[:, None]


def near_binary(values, tol):
    return (np.abs(values) <= tol) | (np.abs(values - 1.0) <= tol)


def build_lifting(D, r="auto", mode="affine", rank_tol=DEFAULT_RANK_TOL):
    """Build the lifting map of the affine hull (``mode="affine"``) or span of ``D``.

    With an explicit ``r`` the detected dimension (numerical rank of the
    centred data, or of ``D`` itself in span mode) must equal ``r - 1``
    (affine) or ``r`` (span); otherwise :class:`RankMismatch` is raised.
    """
    D = _as_2d(D)
    if D.size == 0:
        raise ValueError("D must be nonempty")
    m, n = D.shape
    if mode == "affine":
        p = D.mean(axis=1)
        P = D - p[:, None]
    elif mode == "span":
        p = np.zeros(m)
        P = D
    else:
        raise ValueError(f"unknown mode {mode!r}")

    sel = select_pivots(P, "auto", rank_tol)
    k = sel.numerical_rank
    if r != "auto":
        r = int(r)
        want = r - 1 if mode == "affine" else r
        if want < 0:
            raise ValueError("r must be positive")
        if want != k:
            kind = "affine dimension" if mode == "affine" else "rank"
            raise RankMismatch(f"detected {kind} {k}, expected {want} for r={r}")

    if k == 0:
        return LiftingMap(np.zeros((m, 0)), p, np.empty(0, dtype=np.intp), mode)
    B = P[:, sel.column_indices]
    S = B[sel.row_indices]
    Z = np.linalg.solve(S.T, B.T).T
    Z[sel.row_indices] = np.eye(k)
    return LiftingMap(Z, p, sel.row_indices, mode)


def default_row_order(lifting):
    """Free rows sorted by descending count of nonzero entries of ``Z`` (stable)."""
    free = lifting.free_rows()
    nnz = np.count_nonzero(lifting.Z[free], axis=1)
    return free[np.argsort(-nnz, kind="stable")]


def initial_batch(lifting, start=0, stop=None):
    total = 1 << lifting.n_bits
    stop = total if stop is None else min(stop, total)
    return CandidateBatch(lifting, np.arange(start, stop, dtype=np.int64), ())


def filter_candidates_incremental(batch, row_order, tol_binary=DEFAULT_TOL_BINARY):
    """Drop codes whose lifted value on any of ``row_order`` is not within tol of {0,1}.

    Rows are processed one at a time and only the survivors of earlier rows
    are evaluated on later ones.
    """
    lifting = batch.lifting
    rows = [int(i) for i in np.asarray(row_order, dtype=np.intp).ravel()]
    taken = set(int(i) for i in lifting.anchor_rows) | set(batch.checked_rows)
    if taken.intersection(rows) or len(set(rows)) != len(rows):
        raise ValueError("row_order must be distinct and avoid anchor and checked rows")

    codes = batch.codes
    for i in rows:
        if codes.size == 0:
            break
        vals = code_values(lifting.Z[i : i + 1], lifting.offset[i : i + 1], codes)[0]
        codes = codes[near_binary(vals, tol_binary)]
    return CandidateBatch(lifting, codes, tuple(batch.checked_rows) + tuple(rows))


def _filter_full(batch, rows, tol_binary):
    lifting = batch.lifting
    codes = batch.codes
    keep = np.ones(codes.size, dtype=bool)
    block = max(1, _BLOCK_ELEMS // max(1, codes.size))
    for lo in range(0, rows.size, block):
        rb = rows[lo : lo + block]
        vals = code_values(lifting.Z[rb], lifting.offset[rb], codes)
        keep &= near_binary(vals, tol_binary).all(axis=0)
    return CandidateBatch(lifting, codes[keep], tuple(batch.checked_rows) + tuple(int(i) for i in rows))


def _filter_incremental_chunk(batch, order, tol_binary, small=1 << 16):
    # one row at a time while the pool is large, then the rest as one block
    for pos, i in enumerate(order):
        if batch.codes.size == 0:
            break
        rest = order[pos:]
        if batch.codes.size * rest.size <= small:
            return _filter_full(batch, rest, tol_binary)
        batch = filter_candidates_incremental(batch, [i], tol_binary)
    return batch


def _materialize(lifting, codes, tol_binary):
    codes = np.sort(np.asarray(codes, dtype=np.int64))
    m, k = lifting.m, lifting.n_bits
    V = np.zeros((m, codes.size), dtype=np.int8)
    if codes.size:
        free = lifting.free_rows()
        vals = lifting.lift(codes, free)
        ok = near_binary(vals, tol_binary).all(axis=0)
        codes, vals = codes[ok], vals[:, ok]
        V = np.zeros((m, codes.size), dtype=np.int8)
        V[free] = (vals > 0.5).astype(np.int8)
        if k:
            V[lifting.anchor_rows] = code_bits(codes, k).T.astype(np.int8)
    return VertexSet(V, codes)


def enumerate_vertices(
    lifting,
    tol_binary=DEFAULT_TOL_BINARY,
    pruning="incremental",
    cap=DEFAULT_CAP,
    chunk_bits=CHUNK_BITS,
    max_pool=None,
):
    """All codes of ``lifting`` whose lifted candidate is binary within ``tol_binary``."""
    if pruning not in PRUNING_MODES:
        raise ValueError(f"pruning must be one of {PRUNING_MODES}")
    k = lifting.n_bits
    if k > cap:
        raise CandidateOverflow(f"{k} code bits exceed the cap of {cap}")

    order = default_row_order(lifting)
    if pruning == "ilp" and k > 0:
        from .ilp import DEFAULT_MAX_POOL, BoxFeasibilityProblem, solve_box_feasibility

        problem = BoxFeasibilityProblem(lifting.Z[order], lifting.offset[order])
        pool = solve_box_feasibility(
            problem, max_pool=DEFAULT_MAX_POOL if max_pool is None else max_pool
        )
        if not pool.truncated:
            batch = CandidateBatch(lifting, pool.codes, ())
            batch = filter_candidates_incremental(batch, order, tol_binary)
            return _materialize(lifting, batch.codes, tol_binary)
        log.warning("solution pool truncated at %d codes; enumerating instead", len(pool.codes))
        pruning = "incremental"

    total = 1 << k
    step = 1 << min(k, chunk_bits)
    found = []
    for start in range(0, total, step):
        batch = initial_batch(lifting, start, start + step)
        if pruning == "full":
            batch = _filter_full(batch, order, tol_binary)
        else:
            batch = _filter_incremental_chunk(batch, order, tol_binary)
        found.append(batch.codes)
    return _materialize(lifting, np.concatenate(found), tol_binary)


def find_vertices_affine(
    D,
    r="auto",
    tol_binary=DEFAULT_TOL_BINARY,
    pruning="incremental",
    cap=DEFAULT_CAP,
    rank_tol=DEFAULT_RANK_TOL,
):
    """Return ``{0,1}^m`` intersected with the affine hull of the columns of ``D``.

    Anchors the lifting at the column mean, picks ``r - 1`` independent
    columns/rows of the centred data by pivoted QR and checks the
    ``2**(r-1)`` candidates. Vertices are ordered by code.

    Raises
    ------
    RankMismatch
        If ``r`` is given and the affine dimension of ``D`` is not ``r - 1``.
    CandidateOverflow
        If ``r - 1 > cap``.
    """
    lifting = build_lifting(D, r, "affine", rank_tol)
    return enumerate_vertices(lifting, tol_binary, pruning, cap)


def find_vertices_span(
    D,
    r="auto",
    tol_binary=DEFAULT_TOL_BINARY,
    pruning="incremental",
    cap=DEFAULT_CAP,
    rank_tol=DEFAULT_RANK_TOL,
):
    """Return ``{0,1}^m`` intersected with the column span of ``D`` (always contains 0)."""
    lifting = build_lifting(D, r, "span", rank_tol)
    return enumerate_vertices(lifting, tol_binary, pruning, cap)
