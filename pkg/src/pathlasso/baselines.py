"""Comparison methods: PCA, a plain autoencoder and the parameter-wise lasso autoencoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, make_rng
from .errors import ConfigError, ShapeError
from .trainer import (
    PRUNE_TOL,
    Autoencoder,
    AutoencoderSpec,
    TrainConfig,
    TrainReport,
    _adam_stage,
    empty_mask,
)


@dataclass
class PcaModel:
    mean: np.ndarray
    loadings: np.ndarray  # (d_x, d_z), orthonormal columns
    explained_variance_ratio: np.ndarray

    @property
    def d_z(self) -> int:
        return self.loadings.shape[1]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.loadings

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return self.mean + np.asarray(Z, dtype=float) @ self.loadings.T

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        return self.inverse_transform(self.transform(X))

    def encode(self, X):
        return self.transform(X)

    def connections(self) -> np.ndarray:
        return np.abs(self.loadings.T)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "loadings": self.loadings.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(np.array(d["mean"], dtype=float), np.array(d["loadings"], dtype=float),
                   np.array(d["explained_variance_ratio"], dtype=float))


def pca_fit(data, d_z: int) -> PcaModel:
    """Top ``d_z`` eigenvectors of the sample covariance.

    Each loading is signed so its first non-negligible entry is positive.
    """
    X = np.asarray(data, dtype=float)
    n, d_x = X.shape
    if n < 2:
        raise ShapeError("PCA needs at least two rows")
    if not 1 <= d_z <= d_x:
        raise ConfigError(f"need 1 <= d_z <= {d_x}")
    mean = X.mean(axis=0)
    cov = (X - mean).T @ (X - mean) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    for c in range(d_x):
        col = evecs[:, c]
        first = np.flatnonzero(np.abs(col) > 1e-12)
        if first.size and col[first[0]] < 0:
            evecs[:, c] = -col
    total = evals.sum()
    ratios = evals / total if total > 0 else np.full(d_x, 1.0 / d_x)
    return PcaModel(mean, evecs[:, :d_z].copy(), ratios[:d_z].copy())


def plain_ae_train(data: Dataset, spec: AutoencoderSpec, config: Optional[TrainConfig] = None):
    """Unpenalized autoencoder; returns ``(autoencoder, TrainReport)``."""
    config = TrainConfig() if config is None else config
    X_train, _ = data.part("train")
    X_val, _ = data.part("val")
    rng = make_rng(config.seed)
    ae = spec.build(rng)
    ae, curve = _adam_stage(ae, X_train, X_val, config, rng, "stage1")
    conn = ae.connections()
    return ae, TrainReport({"stage1": curve}, conn, int(np.count_nonzero(conn > PRUNE_TOL)), empty_mask(ae))


class _L1Autoencoder(Autoencoder):
    """Autoencoder whose objective adds ``l1 * sum(|w|)`` over all weights."""

    l1: float = 0.0

    def loss_gradients(self, X):
        loss, g_enc, g_dec = super().loss_gradients(X)
        if self.l1:
            for net, g in ((self.encoder, g_enc), (self.decoder, g_dec)):
                for l, W in enumerate(net.weights):
                    g.d_weights[l] = g.d_weights[l] + self.l1 * np.sign(W)
            loss += self.l1 * self.weight_l1()
        return loss, g_enc, g_dec

    def weight_l1(self) -> float:
        return float(sum(np.abs(W).sum() for net in self.networks() for W in net.weights))

    def loss(self, X):
        return super().loss(X) + self.l1 * self.weight_l1()

    def copy(self):
        out = _L1Autoencoder(self.encoder.copy(), self.decoder.copy())
        out.l1 = self.l1
        return out


def _thresholded(ae: Autoencoder, threshold: float) -> Autoencoder:
    out = ae.copy()
    for net in out.networks():
        for W in net.weights:
            W[np.abs(W) < threshold] = 0.0
    return out


def threshold_for_target(ae: Autoencoder, target: int) -> float:
    """Smallest magnitude cut whose connection count is closest to ``target``."""
    mags = np.unique(np.concatenate([np.abs(W).ravel() for net in ae.networks() for W in net.weights]))
    candidates = np.concatenate([[0.0], np.nextafter(mags, np.inf)])
    best, best_gap = 0.0, np.inf
    for cut in candidates:
        count = int(np.count_nonzero(_thresholded(ae, cut).connections() > PRUNE_TOL))
        gap = abs(count - target)
        if gap < best_gap:
            best, best_gap = float(cut), gap
        if count <= target:
            break
    return best


def lasso_ae_train(
    data: Dataset,
    spec: AutoencoderSpec,
    lam: float,
    threshold: Optional[float] = None,
    config: Optional[TrainConfig] = None,
    relative_threshold: float = 1e-3,
    target_connections: Optional[int] = None,
):
    """Parameter-wise l1 autoencoder with hard thresholding and a masked fine-tune.

    ``threshold`` defaults to ``relative_threshold * max |w|`` after the penalized stage.
    With ``target_connections`` the threshold is instead the smallest weight
    magnitude cut leaving that many connections (or the closest count).
    Returns ``(autoencoder, connection matrix, TrainReport)``.
    """
    if lam < 0 or relative_threshold < 0 or (threshold is not None and threshold < 0):
        raise ConfigError("lambda and threshold must be non-negative")
    if target_connections is not None and threshold is not None:
        raise ConfigError("give either threshold or target_connections, not both")
    config = TrainConfig() if config is None else config
    X_train, _ = data.part("train")
    X_val, _ = data.part("val")
    rng = make_rng(config.seed)
    base = spec.build(rng)
    ae = _L1Autoencoder(base.encoder, base.decoder)
    ae.l1 = lam
    ae, curve1 = _adam_stage(ae, X_train, X_val, config, rng, "lasso")
    ae = Autoencoder(ae.encoder, ae.decoder)

    if target_connections is not None:
        threshold = threshold_for_target(ae, target_connections)
    elif threshold is None:
        threshold = relative_threshold * max(float(np.abs(W).max()) for net in ae.networks() for W in net.weights)
    mask = {
        side: [np.abs(W) < threshold for W in net.weights]
        for side, net in (("encoder", ae.encoder), ("decoder", ae.decoder))
    }
    for side, net in (("encoder", ae.encoder), ("decoder", ae.decoder)):
        for W, m in zip(net.weights, mask[side]):
            W[m] = 0.0
    curves = {"lasso": curve1}
    if lam > 0 or threshold > 0:
        ae, curves["finetune"] = _adam_stage(ae, X_train, X_val, config, rng, "finetune", mask=mask)
    conn = ae.connections()
    report = TrainReport(curves, conn, int(np.count_nonzero(conn > PRUNE_TOL)), mask)
    return ae, conn, report
