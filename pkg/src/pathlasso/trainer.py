"""Path-lasso training for autoencoders.

Schedule:

1. Adam on the reconstruction loss (plus the exclusive-lasso balancing term).
1.5 Optional substitution stage: Adam on loss + lambda * sum(W_PL), which
   drives weak connections close to zero.
2. Proximal path-lasso steps with adaptive per-connection penalties
   ``lambda / W_PL_ref**gamma``, where ``W_PL_ref`` is the connection matrix
   after the previous stage.
3. Adam on the reconstruction loss with every pruned link frozen at zero.

Encoder and decoder share one group per (latent, input) pair, so input ``i``
is cut from latent ``j`` exactly when latent ``j`` is cut from output ``i``.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import factorization
from .data import Dataset, make_rng
from .errors import ConfigError, NumericError, ShapeError, TrainingError
from .network import (
    Gradients,
    Network,
    OptimizerState,
    backprop_from_outputs,
    forward_batch,
    init_network,
    optimizer_step,
)
from .penalties import (
    adaptive_penalties,
    connection_matrix,
    exclusive_lasso_penalty,
    symmetric_connection_matrix,
    symmetric_connection_vjp,
)

PRUNE_TOL = 1e-12


@dataclass
class AutoencoderSpec:
    d_x: int
    d_z: int
    hidden: Sequence[int] = (50,)
    bias: bool = True

    def __post_init__(self):
        if self.d_x < 1 or self.d_z < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("layer sizes must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def encoder_dims(self) -> List[int]:
        return [self.d_x, *self.hidden, self.d_z]

    @property
    def decoder_dims(self) -> List[int]:
        return [self.d_z, *reversed(self.hidden), self.d_x]

    def activations(self) -> List[str]:
        return ["tanh"] * len(self.hidden) + ["identity"]

    def build(self, rng: np.random.Generator) -> "Autoencoder":
        L = len(self.hidden) + 1
        enc = init_network(self.encoder_dims, self.activations(), rng, [self.bias] * L)
        dec = init_network(self.decoder_dims, self.activations(), rng, [self.bias] * L)
        return Autoencoder(enc, dec)


@dataclass
class Autoencoder:
    encoder: Network
    decoder: Network

    def __post_init__(self):
        if self.encoder.layer_dims[-1] != self.decoder.layer_dims[0]:
            raise ShapeError("encoder output and decoder input sizes differ")
        if self.encoder.layer_dims[0] != self.decoder.layer_dims[-1]:
            raise ShapeError("encoder input and decoder output sizes differ")

    @property
    def d_x(self) -> int:
        return self.encoder.layer_dims[0]

    @property
    def d_z(self) -> int:
        return self.encoder.layer_dims[-1]

    def copy(self) -> "Autoencoder":
        return Autoencoder(self.encoder.copy(), self.decoder.copy())

    def networks(self):
        return (self.encoder, self.decoder)

    def encode(self, X: np.ndarray) -> np.ndarray:
        return forward_batch(self.encoder, X)[-1]

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        return forward_batch(self.decoder, self.encode(X))[-1]

    def loss(self, X: np.ndarray) -> float:
        R = self.reconstruct(X) - X
        return float(np.sum(R * R) / X.shape[0])

    def connections(self) -> np.ndarray:
        return symmetric_connection_matrix(self.encoder.weights, self.decoder.weights)

    def loss_gradients(self, X: np.ndarray):
        """``(loss, encoder grads, decoder grads)`` of the mean squared reconstruction error."""
        enc_outs = forward_batch(self.encoder, X)
        dec_outs = forward_batch(self.decoder, enc_outs[-1])
        R = dec_outs[-1] - X
        n = X.shape[0]
        g_dec, d_z = backprop_from_outputs(self.decoder, dec_outs, 2.0 * R / n, input_grad=True)
        g_enc = backprop_from_outputs(self.encoder, enc_outs, d_z)
        return float(np.sum(R * R) / n), g_enc, g_dec

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Autoencoder":
        return cls(Network.from_dict(d["encoder"]), Network.from_dict(d["decoder"]))


@dataclass
class TrainConfig:
    lam: float = 0.0
    gamma: float = 2.0
    exclusive_weight: Optional[float] = None  # None -> 0.1 * lam
    substitution: bool = True
    substitution_lambda: Optional[float] = None  # None -> lam
    adam_lr: float = 1e-3
    prox_lr: float = 1e-2
    batch_size: Optional[int] = None
    prox_batch_size: Optional[int] = None
    max_epochs: int = 2000
    prox_max_epochs: int = 2000
    patience: int = 20
    min_delta: float = 1e-5
    seed: int = 0
    block_splits: Optional[list] = None
    boolean_threshold: bool = False
    nmf_max_sweeps: int = 200
    nmf_tolerance: float = 1e-6

    def __post_init__(self):
        if self.lam < 0 or self.gamma <= 0:
            raise ConfigError("need lambda >= 0 and gamma > 0")
        if self.max_epochs < 1 or self.prox_max_epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be positive")
        if self.adam_lr <= 0 or self.prox_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.exclusive_weight is not None and self.exclusive_weight < 0:
            raise ConfigError("exclusive_weight must be non-negative")

    @property
    def exclusive(self) -> float:
        return 0.1 * self.lam if self.exclusive_weight is None else self.exclusive_weight

    @property
    def sub_lambda(self) -> float:
        return self.lam if self.substitution_lambda is None else self.substitution_lambda

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    curves: Dict[str, List[List[float]]]
    connections: np.ndarray
    n_connections: int
    zero_mask: dict
    stage_seconds: Dict[str, float] = field(default_factory=dict, compare=False)

    def __eq__(self, other):
        if not isinstance(other, TrainReport):
            return NotImplemented
        return (
            self.curves == other.curves
            and np.array_equal(self.connections, other.connections)
            and self.n_connections == other.n_connections
            and all(
                np.array_equal(a, b)
                for side in ("encoder", "decoder")
                for a, b in zip(self.zero_mask[side], other.zero_mask[side])
            )
        )

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "curves": self.curves,
            "connections": self.connections.tolist(),
            "n_connections": self.n_connections,
            "zero_mask": {k: [m.astype(int).tolist() for m in v] for k, v in self.zero_mask.items()},
        }
        if include_timing:
            out["stage_seconds"] = self.stage_seconds
        return out


# -- penalty gradients -------------------------------------------------------


def _add(g: Gradients, extra: Sequence[np.ndarray]) -> None:
    for l, e in enumerate(extra):
        g.d_weights[l] = g.d_weights[l] + e


def penalty_terms(ae: Autoencoder, path_lambda: float = 0.0, exclusive_weight: float = 0.0):
    """Smooth penalties on the symmetric connection matrix and their weight gradients.

    Value is ``path_lambda * sum(W_PL) + exclusive_weight * sum_j (sum_i W_PL[j, i])**2``.
    Returns ``(value, encoder weight grads, decoder weight grads)``.
    """
    conn = ae.connections()
    value = 0.0
    grad_conn = np.zeros_like(conn)
    if path_lambda:
        value += path_lambda * float(conn.sum())
        grad_conn += path_lambda
    if exclusive_weight:
        pen, g = exclusive_lasso_penalty(conn, "rows")
        value += exclusive_weight * pen
        grad_conn += exclusive_weight * g
    if not (path_lambda or exclusive_weight):
        zeros = lambda net: [np.zeros_like(w) for w in net.weights]  # noqa: E731
        return value, zeros(ae.encoder), zeros(ae.decoder)
    ge, gd = symmetric_connection_vjp(ae.encoder.weights, ae.decoder.weights, grad_conn)
    return value, ge, gd


def objective_gradients(ae: Autoencoder, X: np.ndarray, path_lambda: float = 0.0, exclusive_weight: float = 0.0):
    loss, g_enc, g_dec = ae.loss_gradients(X)
    pen, pe, pd = penalty_terms(ae, path_lambda, exclusive_weight)
    if path_lambda or exclusive_weight:
        _add(g_enc, pe)
        _add(g_dec, pd)
    return loss + pen, g_enc, g_dec


# -- masks -------------------------------------------------------------------


def empty_mask(ae: Autoencoder) -> dict:
    return {
        "encoder": [np.zeros(w.shape, dtype=bool) for w in ae.encoder.weights],
        "decoder": [np.zeros(w.shape, dtype=bool) for w in ae.decoder.weights],
    }


def freeze_mask_apply(net: Network, zero_mask: Optional[Sequence[np.ndarray]]) -> Network:
    """Force the masked weights of ``net`` to zero, in place."""
    if zero_mask is None:
        return net
    if len(zero_mask) != net.n_layers:
        raise ShapeError("need one mask per weight matrix")
    for W, m in zip(net.weights, zero_mask):
        m = np.asarray(m, dtype=bool)
        if m.shape != W.shape:
            raise ShapeError(f"mask of shape {m.shape} does not match weights of shape {W.shape}")
        W[m] = 0.0
    return net


def _cut_connection(weights: List[np.ndarray], out_idx: int, in_idx: int) -> None:
    """Make connection ``(out_idx, in_idx)`` exactly zero by zeroing links on its residual paths."""
    if len(weights) == 1:
        weights[0][out_idx, in_idx] = 0.0
        return
    if len(weights) == 2:
        W1, W2 = weights
        live = (W2[out_idx, :] != 0) & (W1[:, in_idx] != 0)
        for k in np.flatnonzero(live):
            if abs(W2[out_idx, k]) <= abs(W1[k, in_idx]):
                W2[out_idx, k] = 0.0
            else:
                W1[k, in_idx] = 0.0
        return
    # deeper chains: cut the first-layer links that still reach the output node
    reach = np.zeros(weights[-1].shape[1], dtype=bool)
    reach |= weights[-1][out_idx, :] != 0
    for W in reversed(weights[1:-1]):
        reach = (np.abs(W[reach, :]) > 0).any(axis=0)
    weights[0][reach & (weights[0][:, in_idx] != 0), in_idx] = 0.0


def _path_links(weights: List[np.ndarray], out_idx: int, in_idx: int) -> List[np.ndarray]:
    """Boolean masks of the links lying on some path from ``in_idx`` to ``out_idx``."""
    masks = [np.ones(w.shape, dtype=bool) for w in weights]
    if len(weights) == 1:
        masks[0][:] = False
        masks[0][out_idx, in_idx] = True
        return masks
    masks[-1][:] = False
    masks[-1][out_idx, :] = True
    masks[0][:] = False
    masks[0][:, in_idx] = True
    return masks


def update_pruned(ae: Autoencoder, pruned: np.ndarray, mask: dict) -> None:
    """Make pruned connections exact zeros and freeze the zero links on their paths."""
    for j, i in zip(*np.nonzero(pruned)):
        _cut_connection(ae.encoder.weights, j, i)
        _cut_connection(ae.decoder.weights, i, j)
        for side, net, (o, n) in (("encoder", ae.encoder, (j, i)), ("decoder", ae.decoder, (i, j))):
            for m, on_path, W in zip(mask[side], _path_links(net.weights, o, n), net.weights):
                m |= on_path & (W == 0)


# -- stages ------------------------------------------------------------------


def _batches(n: int, batch_size: Optional[int], rng: np.random.Generator):
    if batch_size is None or batch_size >= n:
        yield slice(None)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _check_finite(value: float, stage: str, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss in stage {stage}", stage=stage, step=step)


def _adam_stage(
    ae: Autoencoder,
    X_train: np.ndarray,
    X_val: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    stage: str,
    path_lambda: float = 0.0,
    exclusive_weight: float = 0.0,
    mask: Optional[dict] = None,
):
    """Adam with early stopping on the validation objective; restores the best epoch."""
    states = (OptimizerState("adam", config.adam_lr), OptimizerState("adam", config.adam_lr))
    curve = []
    best_val = np.inf
    best = ae.copy()
    stale = 0
    for epoch in range(config.max_epochs):
        train_obj = 0.0
        for idx in _batches(X_train.shape[0], config.batch_size, rng):
            obj, g_enc, g_dec = objective_gradients(ae, X_train[idx], path_lambda, exclusive_weight)
            _check_finite(obj, stage, epoch)
            train_obj = obj
            for net, g, st, side in zip(ae.networks(), (g_enc, g_dec), states, ("encoder", "decoder")):
                if mask is not None:
                    for gw, m in zip(g.d_weights, mask[side]):
                        gw[m] = 0.0
                optimizer_step(net, g, st)
                if mask is not None:
                    freeze_mask_apply(net, mask[side])
        val = ae.loss(X_val) + penalty_terms(ae, path_lambda, exclusive_weight)[0]
        _check_finite(val, stage, epoch)
        curve.append([train_obj, val])
        if val < best_val - config.min_delta:
            best_val, best, stale = val, ae.copy(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, curve


def substitution_stage(ae: Autoencoder, X_train, X_val, config: TrainConfig, rng=None):
    """Adam on loss + lambda * sum(W_PL) + exclusive term; returns ``(ae, curve)``."""
    rng = make_rng(config.seed) if rng is None else rng
    return _adam_stage(
        ae, X_train, X_val, config, rng, "substitution", config.sub_lambda, config.exclusive
    )


def proximal_path_step(
    ae: Autoencoder,
    batch: np.ndarray,
    config: TrainConfig,
    thresholds: np.ndarray,
    mask: Optional[dict] = None,
) -> Autoencoder:
    """One proximal path-lasso step, in place.

    ``thresholds`` holds ``alpha * lambda_ji`` per connection, shape ``(d_z, d_x)``
    (``inf`` prunes immediately).
    """
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.shape != (ae.d_z, ae.d_x):
        raise ShapeError(f"thresholds must have shape {(ae.d_z, ae.d_x)}, got {thresholds.shape}")
    _, g_enc, g_dec = objective_gradients(ae, batch, 0.0, config.exclusive)
    sgd = OptimizerState("plain_sgd", config.prox_lr)
    for net, g, side in zip(ae.networks(), (g_enc, g_dec), ("encoder", "decoder")):
        optimizer_step(net, g, sgd)
        if mask is not None:
            freeze_mask_apply(net, mask[side])

    conn = ae.connections()
    shrink = factorization.shrink_factor(conn, thresholds)
    if np.all(shrink[conn > 0] == 1.0):
        return ae
    for net, factor in ((ae.encoder, shrink), (ae.decoder, shrink.T)):
        weights = net.weights
        signs = [np.sign(w) for w in weights]
        seeds = [np.abs(w) for w in reversed(weights)]
        target = factorization.chain_product(list(reversed(seeds))) * factor
        problem = factorization.FactorizationProblem(
            target, seeds, max_sweeps=config.nmf_max_sweeps, tolerance=config.nmf_tolerance
        )
        try:
            if config.block_splits:
                result = factorization.block_solve(problem, config.block_splits)
            else:
                result = factorization.solve(problem)
        except NumericError as exc:
            raise TrainingError(
                f"factorization failed: {exc}", stage="proximal", diagnostics={"target_norm": float(np.linalg.norm(target))}
            ) from exc
        factors = result.factors
        if config.boolean_threshold and not result.converged:
            factors, _, _ = factorization.boolean_threshold(factors, target > 0)
        for l, F in enumerate(reversed(factors)):
            weights[l][...] = signs[l] * F
    return ae


def _proximal_stage(ae, X_train, X_val, config, rng, thresholds, mask):
    curve = []
    best_val = np.inf
    stale = 0
    lam_conn = thresholds / config.prox_lr
    for epoch in range(config.prox_max_epochs):
        for idx in _batches(X_train.shape[0], config.prox_batch_size, rng):
            proximal_path_step(ae, X_train[idx], config, thresholds, mask)
            pruned = ae.connections() < PRUNE_TOL
            update_pruned(ae, pruned, mask)
        conn = ae.connections()
        train = ae.loss(X_train)
        _check_finite(train, "proximal", epoch)
        finite = np.isfinite(lam_conn)
        penalty = float(np.sum(lam_conn[finite] * conn[finite]))
        penalty += config.exclusive * exclusive_lasso_penalty(conn, "rows")[0]
        val = ae.loss(X_val) + penalty
        curve.append([train + penalty, val])
        if val < best_val - config.min_delta:
            best_val, stale = val, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return ae, curve


def train_three_stage(data: Dataset, spec: AutoencoderSpec, config: TrainConfig, ae: Optional[Autoencoder] = None):
    """Train a path-lasso autoencoder; returns ``(autoencoder, TrainReport)``.

    ``data`` must carry train and validation splits.
    """
    X_train, _ = data.part("train")
    X_val, _ = data.part("val")
    if X_train.shape[1] != spec.d_x:
        raise ShapeError(f"data has {X_train.shape[1]} columns, spec expects {spec.d_x}")
    rng = make_rng(config.seed)
    if ae is None:
        ae = spec.build(rng)
    curves: Dict[str, list] = {}
    seconds: Dict[str, float] = {}

    t0 = time.perf_counter()
    ae, curves["stage1"] = _adam_stage(ae, X_train, X_val, config, rng, "stage1", 0.0, config.exclusive)
    seconds["stage1"] = time.perf_counter() - t0

    mask = empty_mask(ae)
    if config.lam > 0:
        if config.substitution:
            t0 = time.perf_counter()
            ae, curves["substitution"] = substitution_stage(ae, X_train, X_val, config, rng)
            seconds["substitution"] = time.perf_counter() - t0
        reference = ae.connections()
        thresholds = config.prox_lr * adaptive_penalties(reference, config.lam, config.gamma)
        t0 = time.perf_counter()
        ae, curves["stage2"] = _proximal_stage(ae, X_train, X_val, config, rng, thresholds, mask)
        seconds["stage2"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        ae, curves["stage3"] = _adam_stage(ae, X_train, X_val, config, rng, "stage3", mask=mask)
        seconds["stage3"] = time.perf_counter() - t0

    conn = ae.connections()
    report = TrainReport(curves, conn, int(np.count_nonzero(conn > PRUNE_TOL)), mask, seconds)
    return ae, report


def encoder_connections(ae: Autoencoder) -> np.ndarray:
    return connection_matrix(ae.encoder.weights)


def decoder_connections(ae: Autoencoder) -> np.ndarray:
    return connection_matrix(ae.decoder.weights)
