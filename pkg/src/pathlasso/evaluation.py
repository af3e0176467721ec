"""Reconstruction metrics: explained variance, reconstruction match and connection counts."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError, UndefinedMetricError


@dataclass
class MetricReport:
    r2: float
    obs_match: float
    label_match: Optional[float] = None
    knn_match: Optional[float] = None
    knn_k: Optional[int] = None
    connections: Optional[int] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _pair(original, reconstructed):
    X = np.asarray(original, dtype=float)
    Xh = np.asarray(reconstructed, dtype=float)
    if X.ndim != 2 or X.shape != Xh.shape:
        raise ShapeError(f"shapes {X.shape} and {Xh.shape} differ")
    return X, Xh


def r_squared(original, reconstructed) -> float:
    """``1 - SSE / total sum of squares`` around the column means of ``original``."""
    X, Xh = _pair(original, reconstructed)
    total = float(np.sum((X - X.mean(axis=0)) ** 2))
    if total == 0.0:
        raise UndefinedMetricError("original data has zero total variance")
    return 1.0 - float(np.sum((Xh - X) ** 2)) / total


def distance_table(reconstructed, original) -> np.ndarray:
    """``D[i, j] = ||reconstructed_i - original_j||_2``."""
    Xh = np.asarray(reconstructed, dtype=float)
    X = np.asarray(original, dtype=float)
    sq = (Xh * Xh).sum(1)[:, None] + (X * X).sum(1)[None, :] - 2.0 * Xh @ X.T
    return np.sqrt(np.maximum(sq, 0.0))


def observation_match(original, reconstructed) -> float:
    """Fraction of reconstructions strictly closer to their own original than to any other."""
    X, Xh = _pair(original, reconstructed)
    D = distance_table(Xh, X)
    own = np.diag(D).copy()
    np.fill_diagonal(D, np.inf)
    return float(np.mean(own < D.min(axis=1)))


def label_match(original, reconstructed, labels) -> float:
    """Fraction whose nearest original (lowest index on ties, itself allowed) shares its label."""
    X, Xh = _pair(original, reconstructed)
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise ShapeError("need one label per row")
    nearest = np.argmin(distance_table(Xh, X), axis=1)
    return float(np.mean(labels[nearest] == labels))


def knn_match(original, reconstructed, k: int) -> float:
    """Fraction whose own original is among the ``k`` originals nearest to the reconstruction."""
    X, Xh = _pair(original, reconstructed)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    order = np.argsort(distance_table(Xh, X), axis=1, kind="stable")[:, :k]
    return float(np.mean((order == np.arange(n)[:, None]).any(axis=1)))


def count_connections(conn, tol: float = 1e-12) -> int:
    return int(np.count_nonzero(np.asarray(conn) > tol))


def evaluate(original, reconstructed, labels=None, k: Optional[int] = None, conn=None) -> MetricReport:
    return MetricReport(
        r2=r_squared(original, reconstructed),
        obs_match=observation_match(original, reconstructed),
        label_match=None if labels is None else label_match(original, reconstructed, labels),
        knn_match=None if k is None else knn_match(original, reconstructed, k),
        knn_k=k,
        connections=None if conn is None else count_connections(conn),
    )
