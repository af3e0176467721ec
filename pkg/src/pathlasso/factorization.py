"""Bounded non-negative matrix factorization of penalized path matrices.

Given a non-negative target ``V`` and non-negative seeds ``S_1 ... S_K`` (in
product order, so ``S_1 @ ... @ S_K`` has the shape of ``V``), find factors
``F_k`` with ``0 <= F_k <= S_k`` element-wise that minimize

    0.5 * ||V - F_1 @ ... @ F_K||_F**2 + l1 * sum(F) + 0.5 * l2 * sum(F**2)

by cyclic coordinate descent.  Every coordinate move is the exact minimizer of
a one-dimensional quadratic, clipped to the box, so the objective never
increases.

For a network with weights ``[W_1, ..., W_L]`` the seeds are
``[|W_L|, ..., |W_1|]``.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .penalties import chain_product

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

TAU_GRID = np.logspace(-10, 0, 20)


@dataclass
class FactorizationProblem:
    target: np.ndarray
    seeds: List[np.ndarray]
    l1: float = 0.0
    l2: float = 0.0
    max_sweeps: int = 200
    tolerance: float = 1e-6

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        self.seeds = [np.asarray(s, dtype=float) for s in self.seeds]
        if len(self.seeds) == 0:
            raise ShapeError("need at least one seed")
        for s in self.seeds:
            if s.ndim != 2:
                raise ShapeError("seeds must be matrices")
            if not np.all(np.isfinite(s)) or np.any(s < 0):
                raise ValueError("seeds must be finite and non-negative")
        for k in range(1, len(self.seeds)):
            if self.seeds[k - 1].shape[1] != self.seeds[k].shape[0]:
                raise ShapeError(
                    f"seed {k - 1} of shape {self.seeds[k - 1].shape} does not conform "
                    f"with seed {k} of shape {self.seeds[k].shape}"
                )
        expected = (self.seeds[0].shape[0], self.seeds[-1].shape[1])
        if self.target.shape != expected:
            raise ShapeError(f"target shape {self.target.shape} != seed product shape {expected}")
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigError("l1 and l2 must be non-negative")
        if self.max_sweeps < 1 or not self.tolerance > 0:
            raise ConfigError("need max_sweeps >= 1 and tolerance > 0")


@dataclass
class FactorizationResult:
    factors: List[np.ndarray]
    objective_trace: List[float]
    converged: bool
    n_sweeps: int = 0
    sub_results: Optional[list] = field(default=None, repr=False)


def penalized_path_matrix(weight_list: Sequence[np.ndarray], conn: np.ndarray, threshold) -> np.ndarray:
    """Path sums shrunk by the group-lasso factor ``max(1 - threshold/conn, 0)``.

    ``weight_list`` is ``[W_1, ..., W_L]``; entries with zero connection are 0.
    """
    abs_prod = chain_product([np.abs(np.asarray(w, dtype=float)) for w in weight_list])
    conn = np.asarray(conn, dtype=float)
    if abs_prod.shape != conn.shape:
        raise ShapeError(f"path matrix shape {abs_prod.shape} != connection shape {conn.shape}")
    return abs_prod * shrink_factor(conn, threshold)


def shrink_factor(conn: np.ndarray, threshold) -> np.ndarray:
    conn = np.asarray(conn, dtype=float)
    threshold = np.broadcast_to(np.asarray(threshold, dtype=float), conn.shape)
    if np.any(threshold < 0):
        raise ValueError("thresholds must be non-negative")
    out = np.zeros_like(conn)
    pos = (conn > 0) & np.isfinite(threshold)
    out[pos] = np.maximum(1.0 - threshold[pos] / conn[pos], 0.0)
    return out


def objective(target: np.ndarray, factors: Sequence[np.ndarray], l1: float = 0.0, l2: float = 0.0) -> float:
    resid = target - chain_product(list(reversed(factors)))
    val = 0.5 * float(np.sum(resid * resid))
    if l1:
        val += l1 * sum(float(f.sum()) for f in factors)
    if l2:
        val += 0.5 * l2 * sum(float(np.sum(f * f)) for f in factors)
    return val


def _sweep_columns(W, HHt, VHt, l1, l2, seed):
    # rows of W are independent, so column-by-column equals row-major order
    n, R = W.shape
    for r in range(R):
        denom = HHt[r, r] + l2
        if denom <= 0.0:
            continue
        for i in range(n):
            g = VHt[i, r] - l1 - l2 * W[i, r]
            for q in range(R):
                g -= W[i, q] * HHt[q, r]
            new = W[i, r] + g / denom
            if new < 0.0:
                new = 0.0
            elif new > seed[i, r]:
                new = seed[i, r]
            W[i, r] = new


if njit is not None:
    _sweep_columns = njit(cache=True)(_sweep_columns)


def _update_left(W, H, V, l1, l2, seed):
    """Coordinate sweep over ``W`` in ``V ~ W @ H``."""
    W = np.ascontiguousarray(W)
    _sweep_columns(W, np.ascontiguousarray(H @ H.T), np.ascontiguousarray(V @ H.T), float(l1), float(l2),
                   np.ascontiguousarray(seed, dtype=float))
    return W


def update_outer(factor, left_product, right_product, target, l1=0.0, l2=0.0, seeds=None):
    """One sweep over an outermost factor.

    Pass ``left_product=None`` when ``factor`` is leftmost (``V ~ F @ right``)
    and ``right_product=None`` when it is rightmost (``V ~ left @ F``).  Entries
    are visited in row-major order; the updated copy is returned.
    """
    F = np.array(factor, dtype=float)
    seed = np.asarray(seeds if seeds is not None else factor, dtype=float)
    V = np.asarray(target, dtype=float)
    if left_product is not None and right_product is not None:
        raise ValueError("an outer factor has a product on one side only; use update_middle")
    if left_product is None:
        H = np.eye(F.shape[1]) if right_product is None else np.asarray(right_product, dtype=float)
        if (F @ H).shape != V.shape:
            raise ShapeError("factor and right product do not match the target")
        return _update_left(F, H, V, l1, l2, seed)
    left = np.asarray(left_product, dtype=float)
    if (left @ F).shape != V.shape:
        raise ShapeError("left product and factor do not match the target")
    # V ~ left @ F  <=>  V.T ~ F.T @ left.T; columns of F are independent
    return _update_left(F.T.copy(), left.T, V.T, l1, l2, seed.T).T.copy()


def update_middle(factor, left, right, target, l1=0.0, l2=0.0, seeds=None):
    """One row-major sweep over ``M`` in ``V ~ left @ M @ right``."""
    M = np.array(factor, dtype=float)
    seed = np.asarray(seeds if seeds is not None else factor, dtype=float)
    W = np.asarray(left, dtype=float)
    H = np.asarray(right, dtype=float)
    V = np.asarray(target, dtype=float)
    if (W @ M @ H).shape != V.shape:
        raise ShapeError("left @ factor @ right does not match the target")
    WtW = W.T @ W
    HHt = H @ H.T
    WtVHt = W.T @ V @ H.T
    G = WtW @ M @ HHt
    for p in range(M.shape[0]):
        for r in range(M.shape[1]):
            denom = WtW[p, p] * HHt[r, r] + l2
            if denom <= 0.0:
                continue
            old = M[p, r]
            s = (WtVHt[p, r] - G[p, r] - l1 - l2 * old) / denom
            new = min(max(old + s, 0.0), seed[p, r])
            if new != old:
                M[p, r] = new
                G += (new - old) * np.outer(WtW[:, p], HHt[r, :])
    return M


def _sweep(factors, seeds, V, l1, l2):
    K = len(factors)
    for k in range(K):
        left = chain_product(list(reversed(factors[:k]))) if k > 0 else None
        right = chain_product(list(reversed(factors[k + 1:]))) if k < K - 1 else None
        if left is not None and right is not None:
            factors[k] = update_middle(factors[k], left, right, V, l1, l2, seeds[k])
        else:
            factors[k] = update_outer(factors[k], left, right, V, l1, l2, seeds[k])
        if not np.all(np.isfinite(factors[k])):
            raise NumericError(f"non-finite values in factor {k} during coordinate descent")


def solve(problem: FactorizationProblem) -> FactorizationResult:
    """Coordinate descent from the seeds until the relative decrease drops below tolerance."""
    V = problem.target
    factors = [s.copy() for s in problem.seeds]
    prev = objective(V, factors, problem.l1, problem.l2)
    trace = [prev]
    converged = False
    sweeps = 0
    for sweeps in range(1, problem.max_sweeps + 1):
        _sweep(factors, problem.seeds, V, problem.l1, problem.l2)
        cur = objective(V, factors, problem.l1, problem.l2)
        if not np.isfinite(cur):
            raise NumericError("objective became non-finite")
        trace.append(cur)
        if cur == 0.0 or prev - cur <= problem.tolerance * prev:
            converged = True
            break
        prev = cur
    return FactorizationResult(factors, trace, converged, sweeps)


def _resolve_splits(splits, dims) -> List[List[int]]:
    if len(splits) != len(dims):
        raise ConfigError(f"need one split per node layer ({len(dims)}), got {len(splits)}")
    out = []
    for s, d in zip(splits, dims):
        if np.ndim(s) == 0:
            n = int(s)
            if not 1 <= n <= d:
                raise ConfigError(f"cannot split a layer of size {d} into {n} blocks")
            sizes = [len(a) for a in np.array_split(np.arange(d), n)]
        else:
            sizes = [int(x) for x in s]
            if sum(sizes) != d or any(x <= 0 for x in sizes):
                raise ConfigError(f"block sizes {sizes} do not partition a layer of size {d}")
        out.append(sizes)
    return out


def _block_slices(sizes: List[int]) -> List[slice]:
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def block_targets(problem: FactorizationProblem, splits) -> dict:
    """Per-block path-sum components of the target.

    Keys are block-index tuples ``(b_0, ..., b_K)`` over the node layers in
    product order (``b_0`` splits the rows of ``seeds[0]``, ``b_K`` the columns
    of ``seeds[-1]``); values are ``(sub_target, sub_seeds)``.  Summing the
    sub-targets over the inner block indices recovers the full target.
    """
    seeds = problem.seeds
    dims = [seeds[0].shape[0]] + [s.shape[1] for s in seeds]
    slices = [_block_slices(sz) for sz in _resolve_splits(splits, dims)]
    full = chain_product(list(reversed(seeds)))
    ratio = np.zeros_like(full)
    pos = full > 0
    ratio[pos] = problem.target[pos] / full[pos]
    out = {}
    for combo in itertools.product(*(range(len(s)) for s in slices)):
        sub_seeds = [seeds[k][slices[k][combo[k]], slices[k + 1][combo[k + 1]]] for k in range(len(seeds))]
        paths = chain_product(list(reversed(sub_seeds)))
        sub_target = paths * ratio[slices[0][combo[0]], slices[-1][combo[-1]]]
        out[combo] = (sub_target, sub_seeds)
    return out


def participation(seeds: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Per factor, which links lie on at least one path of nonzero seed value."""
    K = len(seeds)
    masks = []
    for k in range(K):
        left = chain_product(list(reversed(seeds[:k]))) if k else np.eye(seeds[0].shape[0])
        right = chain_product(list(reversed(seeds[k + 1:]))) if k < K - 1 else np.eye(seeds[-1].shape[1])
        live_in = left.any(axis=0)
        live_out = right.any(axis=1)
        masks.append(np.outer(live_in, live_out) & (seeds[k] > 0))
    return masks


def block_solve(problem: FactorizationProblem, splits, n_jobs: int = 1) -> FactorizationResult:
    """Solve one independent sub-factorization per block combination.

    Within each sub-solution, links on no live path of that block are set to
    zero (they do not affect its objective).  Sub-solutions are then
    aggregated by element-wise maximum, so a link ends up zero only if every
    sub-solution zeroes it.  Links on no live path of the whole problem keep
    their seed value, as in :func:`solve`.
    """
    seeds = problem.seeds
    dims = [seeds[0].shape[0]] + [s.shape[1] for s in seeds]
    slices = [_block_slices(sz) for sz in _resolve_splits(splits, dims)]
    parts = block_targets(problem, splits)

    def run(item):
        combo, (sub_target, sub_seeds) = item
        sub = FactorizationProblem(
            sub_target, sub_seeds, problem.l1, problem.l2, problem.max_sweeps, problem.tolerance
        )
        res = solve(sub)
        res.factors = [f * m for f, m in zip(res.factors, participation(sub_seeds))]
        return combo, res

    items = sorted(parts.items())
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = dict(pool.map(run, items))
    else:
        results = dict(map(run, items))

    factors = [np.zeros_like(s) for s in seeds]
    for combo in sorted(results):
        res = results[combo]
        for k in range(len(seeds)):
            rows, cols = slices[k][combo[k]], slices[k + 1][combo[k + 1]]
            np.maximum(factors[k][rows, cols], res.factors[k], out=factors[k][rows, cols])
    for f, s, live in zip(factors, seeds, participation(seeds)):
        f[~live] = s[~live]
    final = objective(problem.target, factors, problem.l1, problem.l2)
    return FactorizationResult(
        factors,
        [final],
        all(r.converged for r in results.values()),
        max(r.n_sweeps for r in results.values()),
        sub_results=[results[c] for c in sorted(results)],
    )


def boolean_product(bool_factors: Sequence[np.ndarray]) -> np.ndarray:
    out = np.asarray(bool_factors[0], dtype=np.int64)
    for f in bool_factors[1:]:
        out = ((out @ np.asarray(f, dtype=np.int64)) > 0).astype(np.int64)
    return (out > 0).astype(np.int64)


def boolean_mismatch(factors: Sequence[np.ndarray], target_pattern: np.ndarray, tau: float) -> int:
    prod = boolean_product([f > tau for f in factors])
    return int(np.sum(np.abs(np.asarray(target_pattern, dtype=np.int64) - prod)))


def boolean_threshold(
    result: Union[FactorizationResult, Sequence[np.ndarray]],
    target_pattern: np.ndarray,
    taus: Optional[Sequence[float]] = None,
) -> Tuple[List[np.ndarray], float, int]:
    """Pick the threshold whose Boolean factor product best matches ``target_pattern``.

    Returns ``(thresholded factors, tau, mismatch)``; ties go to the smallest tau.
    """
    factors = result.factors if isinstance(result, FactorizationResult) else list(result)
    grid = TAU_GRID if taus is None else np.sort(np.asarray(taus, dtype=float))
    pattern = (np.asarray(target_pattern) != 0).astype(np.int64)
    best_tau, best = None, None
    for tau in grid:
        m = boolean_mismatch(factors, pattern, tau)
        if best is None or m < best:
            best_tau, best = float(tau), m
    return [f * (f > best_tau) for f in factors], best_tau, best
