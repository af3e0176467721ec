"""Lasso-family penalties and the path machinery.

A *connection* between input node ``i0`` and output node ``iL`` is the l2 norm
over the values of every path joining them, where a path value is the product
of the absolute weights along it.  All connections at once form the
connection matrix ``sqrt(W_L**2 @ ... @ W_1**2)``.
"""
from __future__ import annotations

import itertools
import math
from typing import List, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, ConfigError, ShapeError
from .network import Network

#: Per-connection penalty meaning "remove this connection at the first proximal step".
PRUNE = math.inf

WeightList = Sequence[np.ndarray]


def prox_lasso(theta, threshold):
    """Soft thresholding: ``sign(theta) * max(|theta| - threshold, 0)``."""
    theta = np.asarray(theta, dtype=float)
    out = np.sign(theta) * np.maximum(np.abs(theta) - threshold, 0.0)
    return float(out) if out.ndim == 0 else out


def prox_group_lasso(theta_group, threshold) -> np.ndarray:
    """Shrink a whole group by ``max(1 - threshold / ||theta||_2, 0)``.

    A group with zero norm is returned as zeros.
    """
    theta = np.asarray(theta_group, dtype=float)
    norm = np.linalg.norm(theta)
    if norm == 0.0:
        return np.zeros_like(theta)
    return theta * max(1.0 - threshold / norm, 0.0)


def _weights_of(net_or_weights) -> List[np.ndarray]:
    if isinstance(net_or_weights, Network):
        return net_or_weights.weights
    return [np.asarray(w, dtype=float) for w in net_or_weights]


def _check_chain(weights: WeightList) -> None:
    if len(weights) == 0:
        raise ShapeError("need at least one weight matrix")
    for l in range(1, len(weights)):
        if weights[l].ndim != 2 or weights[l].shape[1] != weights[l - 1].shape[0]:
            raise ShapeError(
                f"weights[{l}] of shape {weights[l].shape} cannot follow shape {weights[l - 1].shape}"
            )


def path_value(net_or_weights, path: Sequence[int]) -> float:
    """Product of absolute link values along ``path = (i_0, i_1, ..., i_L)``."""
    weights = _weights_of(net_or_weights)
    if len(path) != len(weights) + 1:
        raise ShapeError(f"a path through {len(weights)} layers needs {len(weights) + 1} indices")
    value = 1.0
    for l, W in enumerate(weights):
        row, col = path[l + 1], path[l]
        if not (0 <= row < W.shape[0] and 0 <= col < W.shape[1]):
            raise ShapeError(f"index ({row}, {col}) out of range for layer {l + 1} of shape {W.shape}")
        value *= abs(W[row, col])
    return value


def chain_product(mats: Sequence[np.ndarray], size: int = None) -> np.ndarray:
    """``mats[-1] @ ... @ mats[0]``; identity of ``size`` for an empty list."""
    if len(mats) == 0:
        return np.eye(size)
    out = mats[0]
    for m in mats[1:]:
        out = m @ out
    return out


def square_product(weights: WeightList) -> np.ndarray:
    """Sum of squared path values: ``W_L**2 @ ... @ W_1**2``."""
    weights = _weights_of(weights)
    _check_chain(weights)
    return chain_product([w * w for w in weights])


def connection_matrix(weight_list: WeightList) -> np.ndarray:
    """Connection strengths, shape ``(d_L, d_0)``; invariant to weight signs."""
    return np.sqrt(square_product(weight_list))


def enumerate_paths_norm(weight_list: WeightList, i_L: int, i_0: int, cap: int = 10**6) -> float:
    """Brute-force l2 norm over all path values joining ``i_0`` to ``i_L``."""
    weights = _weights_of(weight_list)
    _check_chain(weights)
    inner = [w.shape[0] for w in weights[:-1]]
    if math.prod(inner) > cap:
        raise CapacityError(f"{math.prod(inner)} paths exceed the enumeration cap of {cap}")
    total = 0.0
    for middle in itertools.product(*(range(d) for d in inner)):
        total += path_value(weights, (i_0, *middle, i_L)) ** 2
    return math.sqrt(total)


def adaptive_penalties(reference: np.ndarray, lam: float, gamma: float = 2.0) -> np.ndarray:
    """Per-connection penalties ``lam / reference**gamma``.

    Zero reference connections get :data:`PRUNE`.
    """
    if lam < 0 or gamma <= 0:
        raise ConfigError("need lambda >= 0 and gamma > 0")
    ref = np.asarray(reference, dtype=float)
    out = np.full(ref.shape, PRUNE)
    pos = ref > 0
    out[pos] = lam / ref[pos] ** gamma
    return out


def square_product_vjp(weights: WeightList, grad_s: np.ndarray) -> List[np.ndarray]:
    """Gradient of ``sum(grad_s * square_product(weights))`` w.r.t. each weight."""
    weights = _weights_of(weights)
    sq = [w * w for w in weights]
    L = len(sq)
    # right[l] = A_{l-1} ... A_1 (shape d_{l-1} x d_0)
    right = [np.eye(weights[0].shape[1])]
    for l in range(L - 1):
        right.append(sq[l] @ right[-1])
    grads: List[np.ndarray] = [None] * L  # type: ignore[list-item]
    upstream = grad_s  # A_L..A_{l+1} transposed, applied to grad_s
    for l in range(L - 1, -1, -1):
        grads[l] = 2.0 * weights[l] * (upstream @ right[l].T)
        upstream = sq[l].T @ upstream
    return grads


def _sqrt_vjp(s: np.ndarray, grad_conn: np.ndarray) -> np.ndarray:
    # d sqrt(s)/ds, with the sub-gradient at s = 0 taken as 0
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = grad_conn[pos] / (2.0 * np.sqrt(s[pos]))
    return out


def connection_matrix_vjp(weight_list: WeightList, grad_conn: np.ndarray) -> List[np.ndarray]:
    """Gradient of ``sum(grad_conn * connection_matrix(weights))`` w.r.t. each weight."""
    s = square_product(weight_list)
    return square_product_vjp(weight_list, _sqrt_vjp(s, np.asarray(grad_conn, dtype=float)))


def symmetric_connection_matrix(encoder_weights: WeightList, decoder_weights: WeightList) -> np.ndarray:
    """Joint encoder/decoder connections, shape ``(d_z, d_x)``.

    Entry ``(j, i)`` pools the paths ``x_i -> z_j`` and ``z_j -> xhat_i``.
    """
    se = square_product(encoder_weights)
    sd = square_product(decoder_weights)
    if se.shape != sd.T.shape:
        raise ShapeError(f"encoder connections {se.shape} do not mirror decoder connections {sd.shape}")
    return np.sqrt(se + sd.T)


def symmetric_connection_vjp(
    encoder_weights: WeightList, decoder_weights: WeightList, grad_conn: np.ndarray
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Gradient of ``sum(grad_conn * symmetric_connection_matrix(...))`` for both sides."""
    se = square_product(encoder_weights)
    sd = square_product(decoder_weights)
    gs = _sqrt_vjp(se + sd.T, np.asarray(grad_conn, dtype=float))
    return square_product_vjp(encoder_weights, gs), square_product_vjp(decoder_weights, gs.T)


def _group_labels(shape, groups) -> np.ndarray:
    if isinstance(groups, str):
        if groups == "rows":
            return np.repeat(np.arange(shape[0]), shape[1]).reshape(shape)
        if groups == "columns":
            return np.tile(np.arange(shape[1]), shape[0]).reshape(shape)
        raise ConfigError(f"unknown grouping {groups!r}")
    arr = np.asarray(groups) if not isinstance(groups, list) else None
    if arr is not None and arr.shape == tuple(shape) and np.issubdtype(arr.dtype, np.integer):
        if np.any(arr < 0):
            raise ConfigError("group labels must be non-negative")
        return arr
    # explicit list of groups, each a list of flat indices or (row, col) pairs
    labels = np.full(int(np.prod(shape)), -1)
    for g, members in enumerate(groups):
        for m in members:
            flat = np.ravel_multi_index(tuple(m), shape) if np.ndim(m) == 1 else int(m)
            if labels[flat] != -1:
                raise ConfigError(f"entry {m} belongs to more than one group")
            labels[flat] = g
    if np.any(labels < 0):
        raise ConfigError("groups do not cover every entry")
    return labels.reshape(shape)


def exclusive_lasso_penalty(conn: np.ndarray, groups: Union[str, Sequence] = "rows"):
    """Sum over groups of the squared group l1 norm.

    ``groups`` is ``"rows"``, ``"columns"``, an integer label array shaped like
    ``conn``, or a list of groups of indices that must partition the entries.
    Returns ``(penalty, gradient w.r.t. conn)``.
    """
    conn = np.asarray(conn, dtype=float)
    labels = _group_labels(conn.shape, groups)
    sums = np.bincount(labels.ravel(), weights=np.abs(conn).ravel())
    penalty = float(np.sum(sums**2))
    grad = 2.0 * sums[labels] * np.sign(conn)
    return penalty, grad
