"""Dense linear-algebra kernels: pivot selection, truncated SVD and least squares.

Everything here works on plain ``numpy`` arrays. Matrices are float64; a 1-D
right-hand side is treated as a single column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, DimensionMismatch, RankDeficient

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class PivotSelection:
    """Independent columns and rows picked by column-pivoted QR.

    ``M[np.ix_(row_indices, column_indices)]`` is square and invertible.
    """

    column_indices: np.ndarray
    row_indices: np.ndarray
    numerical_rank: int
    rank_tolerance: float

    def submatrix(self, M):
        return np.asarray(M)[np.ix_(self.row_indices, self.column_indices)]


@dataclass(frozen=True)
class SpectralBasis:
    basis: np.ndarray  # m x k, orthonormal columns
    singular_values: np.ndarray  # k, non-increasing


def _as_2d(M):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {M.shape}")
    return M


def numerical_rank(M, tol=DEFAULT_RANK_TOL):
    """Count QR pivots with magnitude above ``tol`` times the leading pivot."""
    M = _as_2d(M)
    if M.size == 0:
        return 0
    R = scipy.linalg.qr(M, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return 0
    return int(np.count_nonzero(diag > tol * diag[0]))


def select_pivots(M, k="auto", tol=DEFAULT_RANK_TOL):
    """Pick ``k`` independent columns of ``M``, then ``k`` independent rows of that block.

    Columns come from a column-pivoted (Businger-Golub) QR of ``M``; rows from
    the same factorization applied to the transpose of the selected column
    block. With ``k="auto"`` the number of pivots whose magnitude exceeds
    ``tol`` times the leading pivot is used.

    Raises
    ------
    RankDeficient
        If ``k`` exceeds the numerical rank of ``M``.
    """
    M = _as_2d(M)
    if M.size == 0:
        raise DimensionMismatch("select_pivots needs a nonempty matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")

    R, col_perm = scipy.linalg.qr(M, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    lead = diag[0] if diag.size else 0.0
    rank = int(np.count_nonzero(diag > tol * lead)) if lead > 0 else 0

    if k == "auto":
        k = rank
    k = int(k)
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k > rank:
        raise RankDeficient(f"requested {k} pivots but numerical rank is {rank}")

    cols = np.asarray(col_perm[:k], dtype=np.intp)
    if k == 0:
        rows = np.empty(0, dtype=np.intp)
    else:
        _, row_perm = scipy.linalg.qr(M[:, cols].T, mode="r", pivoting=True)
        rows = np.asarray(row_perm[:k], dtype=np.intp)
    return PivotSelection(cols, rows, k, float(tol))


def truncated_svd(M, k):
    """Leading ``k`` left singular vectors and singular values of ``M``."""
    M = _as_2d(M)
    if k < 1 or k > min(M.shape):
        raise DimensionMismatch(f"k={k} outside 1..{min(M.shape)} for shape {M.shape}")
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    return SpectralBasis(np.ascontiguousarray(U[:, :k]), s[:k].copy())


def least_squares(T, D, rcond=None):
    """Minimum-norm solution of ``min_A ||D - T A||_F``.

    The pseudo-inverse is formed from the SVD of ``T``; singular values below
    ``rcond * s_max`` (default ``max(T.shape) * eps``) are discarded, which
    gives the minimum-norm answer when ``T`` is rank deficient.
    """
    T = _as_2d(T)
    D = _as_2d(D)
    if T.shape[0] != D.shape[0]:
        raise DimensionMismatch(f"row mismatch: T {T.shape} vs D {D.shape}")
    if T.shape[1] == 0:
        return np.zeros((0, D.shape[1]))
    U, s, Vt = np.linalg.svd(T, full_matrices=False)
    if rcond is None:
        rcond = max(T.shape) * np.finfo(float).eps
    keep = s > rcond * (s[0] if s.size else 0.0)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return Vt.T @ (inv[:, None] * (U.T @ D))


def project_simplex(Y):
    """Euclidean projection of every column of ``Y`` onto the probability simplex."""
    Y = _as_2d(Y)
    r, n = Y.shape
    U = -np.sort(-Y, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    ind = np.arange(1, r + 1, dtype=float)[:, None]
    cond = U - css / ind > 0
    # last index where cond holds; cond[0] is always true
    rho = r - np.argmax(cond[::-1], axis=0)
    theta = css[rho - 1, np.arange(n)] / rho
    return np.maximum(Y - theta, 0.0)


def simplex_kkt_residual(G, h, X, support_tol=1e-9):
    """Per-column KKT violation of ``min 0.5 x'Gx - h'x`` over the simplex.

    At an optimum every gradient entry on the support equals the smallest
    gradient entry (the multiplier of the sum constraint). The residual is the
    largest gap between a support entry and that minimum, relative to
    ``max(1, |h|_inf)``.
    """
    g = G @ X - h
    gmin = g.min(axis=0)
    gap = np.where(X > support_tol, g - gmin, 0.0).max(axis=0)
    scale = np.maximum(1.0, np.abs(h).max(axis=0))
    return gap / scale


def _polish_support(G, h, x):
    """Solve the equality-constrained problem exactly on the support of ``x``."""
    S = np.flatnonzero(x > 0)
    k = S.size
    if k == 0:
        return None
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = G[np.ix_(S, S)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.concatenate([h[S], [1.0]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    y = sol[:k]
    if y.min() < -1e-12:
        return None
    y = np.maximum(y, 0.0)
    total = y.sum()
    if total <= 0:
        return None
    out = np.zeros_like(x)
    out[S] = y / total
    return out


def simplex_least_squares(T, D, max_iter=10000, kkt_tol=1e-6, check_every=25):
    """Solve ``min ||D - T A||_F`` with every column of ``A`` on the probability simplex.

    Columns are handled by accelerated projected gradient (step ``1/||T'T||_2``,
    exact simplex projection, adaptive momentum restart). Every
    ``check_every`` iterations each unfinished column is polished by solving
    the sum-constrained least-squares problem on its current support; a column
    is done once its KKT residual (:func:`simplex_kkt_residual`) is below
    ``kkt_tol``.

    Raises
    ------
    ConvergenceFailure
        If some column still violates KKT after ``max_iter`` iterations.
    """
    T = _as_2d(T)
    D = _as_2d(D)
    if T.shape[0] != D.shape[0]:
        raise DimensionMismatch(f"row mismatch: T {T.shape} vs D {D.shape}")
    r = T.shape[1]
    n = D.shape[1]
    if r < 1:
        raise DimensionMismatch("simplex_least_squares needs r >= 1")
    if r == 1:
        return np.ones((1, n))

    G = T.T @ T
    h = T.T @ D
    L = float(np.linalg.norm(G, 2))
    if L == 0.0:
        return np.full((r, n), 1.0 / r)

    X = project_simplex(least_squares(T, D))
    done = simplex_kkt_residual(G, h, X) <= kkt_tol
    Y = X.copy()
    t = np.ones(n)
    for it in range(1, max_iter + 1):
        if done.all():
            break
        act = np.flatnonzero(~done)
        Xa, Ya = X[:, act], Y[:, act]
        Xn = project_simplex(Ya - (G @ Ya - h[:, act]) / L)
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t[act] ** 2))
        # gradient-based restart keeps the iteration from oscillating
        restart = np.einsum("ij,ij->j", Ya - Xn, Xn - Xa) > 0
        beta = np.where(restart, 0.0, (t[act] - 1.0) / tn)
        Y[:, act] = Xn + beta * (Xn - Xa)
        X[:, act] = Xn
        t[act] = np.where(restart, 1.0, tn)

        if it % check_every == 0 or it == max_iter:
            for j in act:
                cand = _polish_support(G, h[:, j], X[:, j])
                if cand is not None:
                    res = simplex_kkt_residual(G, h[:, [j]], cand[:, None])[0]
                    if res <= kkt_tol:
                        X[:, j] = cand
                        done[j] = True
                        continue
                if simplex_kkt_residual(G, h[:, [j]], X[:, [j]])[0] <= kkt_tol:
                    done[j] = True

    if not done.all():
        bad = np.flatnonzero(~done).tolist()
        raise ConvergenceFailure(f"simplex least squares: columns {bad} not converged")
    return X
