"""Synthetic benchmarks: data generators, scoring, baselines and sweeps.

Every random draw comes from a Philox generator keyed by
``SeedSequence([seed, ...])`` so each trial (and each restart inside a method)
has its own reproducible substream.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import BinCompError, ConvergenceFailure
from .factorization import (
    ApproxConfig,
    FactorModel,
    apply_levels,
    factorize_approximate,
    substream_seed,
    update_T_rows,
)
from .linalg import least_squares
from .vertices import DEFAULT_CAP, find_vertices_affine

log = logging.getLogger(__name__)

SETUPS = ("T05", "TsparseDense", "T05Adense", "Separable")
METHODS = ("findvertices", "oracle", "box")
DEFAULT_ALPHAS = tuple(round(0.01 * i, 2) for i in range(11))

# refinement used for the "findvertices" method in sweeps
SWEEP_APPROX = dict(restarts_s=10, refine="backward_elim", polish_block_iters=10)

TABLE_FIELDS = (
    "setup", "m", "r", "n", "alpha", "trial", "method",
    "hamming", "hamming_raw", "rmse_signal", "rmse_fit", "status",
)


@dataclass(frozen=True)
class ExperimentConfig:
    setup: str = "T05"
    m: int = 1000
    r: int = 10
    n: int = 20
    noise_alpha: float = 0.0
    bernoulli_p: float = 0.5
    trials: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValueError(f"setup must be one of {SETUPS}")
        if min(self.m, self.r, self.n, self.trials) < 1:
            raise ValueError("m, r, n and trials must be positive")
        if self.noise_alpha < 0:
            raise ValueError("noise_alpha must be nonnegative")
        if not 0.0 < self.bernoulli_p < 1.0:
            raise ValueError("bernoulli_p must lie in (0, 1)")
        if self.setup == "Separable" and self.m < self.r:
            raise ValueError("separable setup needs m >= r")


@dataclass
class ScoreReport:
    hamming_norm: float
    hamming_raw: float
    rmse_signal: float
    rmse_fit: float
    permutation: np.ndarray


def trial_rng(*keys):
    """Philox generator for the substream identified by integer ``keys``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def project_capped_simplex(Y, cap, iters=200):
    """Project each column onto ``{x >= 0, sum(x) = 1, x <= cap}`` by bisection on the shift."""
    Y = np.asarray(Y, dtype=float)
    r = Y.shape[0]
    if cap * r < 1.0:
        raise ValueError("capped simplex is empty")
    lo = Y.min(axis=0) - cap
    hi = Y.max(axis=0)
    for _ in range(iters):
        tau = 0.5 * (lo + hi)
        s = np.clip(Y - tau, 0.0, cap).sum(axis=0)
        too_big = s > 1.0
        lo = np.where(too_big, tau, lo)
        hi = np.where(too_big, hi, tau)
    return np.clip(Y - 0.5 * (lo + hi), 0.0, cap)


def _draw_T(cfg, rng):
    m, r = cfg.m, cfg.r
    if cfg.setup == "TsparseDense":
        probs = np.where(np.arange(r) < math.ceil(r / 2), 0.1, 0.9)
        return (rng.random((m, r)) < probs).astype(np.int8)
    if cfg.setup == "Separable":
        M = (rng.random((m - r, r)) < cfg.bernoulli_p).astype(np.int8)
        T = np.vstack([M, np.eye(r, dtype=np.int8)])
        return T[rng.permutation(m)]
    return (rng.random((m, r)) < cfg.bernoulli_p).astype(np.int8)


def gen_synthetic(cfg, trial=0):
    """Draw ``(D, T_star, A_star)`` with ``D = T_star A_star + alpha E``.

    The draws for a given ``(cfg.seed, trial)`` do not depend on the noise
    level, so a noise sweep reuses the same ``T_star``, ``A_star`` and ``E``
    across its grid.
    """
    rng = trial_rng(cfg.seed, trial)
    T = _draw_T(cfg, rng)
    A = rng.dirichlet(np.ones(cfg.r), size=cfg.n).T
    if cfg.setup == "T05Adense":
        A = project_capped_simplex(A, 2.0 / cfg.r)
    E = rng.standard_normal((cfg.m, cfg.n))
    D = T.astype(float) @ A + cfg.noise_alpha * E
    return D, T, A


def gen_methylation_like(m=500, n=12, r=4, alpha=0.01, levels=(0.1, 0.9), seed=0):
    """Mixtures of binary profiles on shifted levels with simplex proportions."""
    rng = trial_rng(seed, 0)
    T = (rng.random((m, r)) < 0.5).astype(np.int8)
    A = rng.dirichlet(np.ones(r), size=n).T
    D = apply_levels(T, levels) @ A + alpha * rng.standard_normal((m, n))
    return D, T, A


def align_and_score(T_star, A_star, T, A, D, levels=(0.0, 1.0)):
    """Align the columns of ``T`` to ``T_star`` (min total Hamming) and compute the metrics.

    ``hamming_norm`` is ``||T* - T P||_F^2 / (m r)`` after alignment,
    ``hamming_raw`` the same without it. The RMSEs are
    ``||T* A* - T A||_F / sqrt(mn)`` and ``||T A - D||_F / sqrt(mn)``, with
    ``T`` mapped to ``levels``; they do not depend on the alignment.
    """
    T_star = np.asarray(T_star, dtype=float)
    T = np.asarray(T, dtype=float)
    A = np.asarray(A, dtype=float)
    D = np.asarray(D, dtype=float)
    m, r = T_star.shape
    n = D.shape[1]
    if T.shape != T_star.shape:
        raise ValueError(f"shape mismatch: {T.shape} vs {T_star.shape}")
    # cost[i, j] = Hamming distance between true column i and estimated column j
    cost = T_star.T @ (1.0 - T) + (1.0 - T_star).T @ T
    rows, perm = linear_sum_assignment(cost)
    perm = perm[np.argsort(rows)]
    T_al = T[:, perm]
    A_al = A[perm]
    scale = math.sqrt(m * n)
    fitted = apply_levels(T_al, levels) @ A_al
    return ScoreReport(
        hamming_norm=float(np.sum((T_star - T_al) ** 2) / (m * r)),
        hamming_raw=float(np.sum((T_star - T) ** 2) / (m * r)),
        rmse_signal=float(np.linalg.norm(apply_levels(T_star, levels) @ A_star - fitted) / scale),
        rmse_fit=float(np.linalg.norm(fitted - D) / scale),
        permutation=perm,
    )


def oracle_solve(D, A_star):
    """Best binary ``T`` given the true mixing matrix (row-wise exhaustive search)."""
    return update_T_rows(D, A_star)


def box_baseline(D, r, restarts=5, seed=0, max_outer=200, inner_steps=10, rtol=1e-9):
    """Alternating minimization with ``T`` relaxed to ``[0, 1]``, then rounded.

    Each restart starts from a uniform random ``T``. The ``A`` step is exact
    least squares; the ``T`` step runs ``inner_steps`` projected-gradient
    iterations with step ``1/||A A'||_2``, so the objective never increases.
    The best-fitting restart is rounded at 0.5 and ``A`` is refit.
    ``diagnostics["objective"]`` holds every restart's objective trace
    (one value after each half step).
    """
    D = np.asarray(D, dtype=float)
    m, _ = D.shape
    best = None
    traces = []
    for l in range(restarts):
        rng = np.random.Generator(np.random.Philox(substream_seed(seed, l)))
        T = rng.random((m, r))
        trace = []
        prev = np.inf
        for _ in range(max_outer):
            A = least_squares(T, D)
            trace.append(float(np.linalg.norm(D - T @ A) ** 2))
            G = A @ A.T
            H = D @ A.T
            L = float(np.linalg.norm(G, 2))
            if L > 0:
                for _ in range(inner_steps):
                    T = np.clip(T - (T @ G - H) / L, 0.0, 1.0)
            obj = float(np.linalg.norm(D - T @ A) ** 2)
            trace.append(obj)
            if not np.isfinite(obj):
                raise ConvergenceFailure("box baseline produced a non-finite objective")
            if np.isfinite(prev) and prev - obj <= rtol * max(1.0, prev):
                break
            prev = obj
        traces.append(trace)
        if best is None or trace[-1] < best[0]:
            best = (trace[-1], l, T)

    T_round = (best[2] > 0.5).astype(np.int8)
    A = least_squares(T_round.astype(float), D)
    res = float(np.linalg.norm(D - T_round @ A))
    diag = {"best_restart": best[1], "objective": traces}
    return FactorModel(T_round, A, None, "free", res, (0.0, 1.0), diag)


def _run_method(method, D, T_star, A_star, cfg, trial, approx):
    if method == "findvertices":
        acfg = ApproxConfig(cfg.r, seed=substream_seed(cfg.seed, 1000 + trial), **approx)
        model = factorize_approximate(D, acfg)
        return model.T, model.A
    if method == "oracle":
        T = oracle_solve(D, A_star)
        return T, A_star
    if method == "box":
        model = box_baseline(D, cfg.r, 5, substream_seed(cfg.seed, 2000 + trial))
        return model.T, model.A
    raise ValueError(f"unknown method {method!r}")


def _sweep_task(args):
    cfg, trial, methods, approx = args
    D, T_star, A_star = gen_synthetic(cfg, trial)
    rows = []
    for method in methods:
        row = {
            "setup": cfg.setup, "m": cfg.m, "r": cfg.r, "n": cfg.n,
            "alpha": cfg.noise_alpha, "trial": trial, "method": method,
        }
        try:
            T, A = _run_method(method, D, T_star, A_star, cfg, trial, approx)
            score = align_and_score(T_star, A_star, T, A, D)
            row.update(
                hamming=score.hamming_norm, hamming_raw=score.hamming_raw,
                rmse_signal=score.rmse_signal, rmse_fit=score.rmse_fit, status="ok",
            )
        except (BinCompError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("%s failed on %s trial %d: %s", method, cfg.setup, trial, exc)
            row.update(
                hamming=math.nan, hamming_raw=math.nan, rmse_signal=math.nan,
                rmse_fit=math.nan, status=f"failed: {type(exc).__name__}",
            )
        rows.append(row)
    return rows


def noise_grid(base, alphas=DEFAULT_ALPHAS):
    return [replace(base, noise_alpha=float(a)) for a in alphas]


def run_noise_sweep(configs, methods=METHODS, out=None, approx=None, workers=1):
    """Score each method on ``cfg.trials`` draws of every config.

    Returns one row per (setup, alpha, trial, method), sorted by that key with
    methods in the order given. When ``out`` is a path the table is also
    written as CSV.
    """
    methods = tuple(methods)
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValueError(f"unknown methods {sorted(bad)}")
    approx = dict(SWEEP_APPROX if approx is None else approx)
    tasks = [(cfg, t, methods, approx) for cfg in configs for t in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_task, tasks))
    else:
        chunks = [_sweep_task(task) for task in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rank = {m: i for i, m in enumerate(methods)}
    rows.sort(key=lambda d: (d["setup"], d["alpha"], d["trial"], rank[d["method"]]))
    if out is not None:
        write_table(rows, out, TABLE_FIELDS)
    return rows


def summarize(rows, metric="hamming"):
    """Mean of ``metric`` per (setup, alpha, method), ignoring failed rows."""
    acc = {}
    for row in rows:
        if row.get("status", "ok") != "ok":
            continue
        acc.setdefault((row["setup"], row["alpha"], row["method"]), []).append(row[metric])
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}


def vertex_count_study(m, r_list, p_grid, trials, seed=0, cap=DEFAULT_CAP, pruning="incremental"):
    """Largest number of hypercube vertices in ``aff(T)`` over random Bernoulli ``T``.

    Returns one row per ``(r, p)`` with the maximum count over ``trials``
    draws; a cell whose enumeration overflows the cap is marked in
    ``status``.
    """
    rows = []
    for r in r_list:
        for pi, p in enumerate(p_grid):
            counts = []
            status = "ok"
            for t in range(trials):
                rng = trial_rng(seed, r, pi, t)
                T = (rng.random((m, r)) < p).astype(float)
                try:
                    counts.append(len(find_vertices_affine(T, "auto", pruning=pruning, cap=cap)))
                except BinCompError as exc:
                    status = f"failed: {type(exc).__name__}"
                    break
            rows.append({
                "m": m, "r": r, "p": float(p), "trials": len(counts),
                "max_count": max(counts) if counts else -1, "status": status,
            })
    return rows


def rank_sweep(D, r_min, r_max, cfg):
    """RMSE ``||D - T A||_F / sqrt(mn)`` of :func:`factorize_approximate` for each rank."""
    D = np.asarray(D, dtype=float)
    m, n = D.shape
    if r_min < 2 or r_max < r_min:
        raise ValueError("need 2 <= r_min <= r_max")
    rows = []
    for r in range(r_min, r_max + 1):
        try:
            model = factorize_approximate(D, replace(cfg, r=r))
            rows.append({"r": r, "rmse": model.residual_fro / math.sqrt(m * n), "status": "ok"})
        except (BinCompError, ValueError) as exc:
            rows.append({"r": r, "rmse": math.nan, "status": f"failed: {type(exc).__name__}"})
    return rows


def _fmt(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else format(value, ".17g")
    return str(value)


def write_table(rows, path, fields=None):
    fields = list(fields or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fields])


def config_dict(cfg):
    return asdict(cfg)
