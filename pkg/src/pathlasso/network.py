"""Dense feedforward networks: forward pass, l2 loss, backprop and optimizers.

Weights follow the ``W_l @ o_{l-1}`` convention, so ``weights[l]`` has shape
``(d_l, d_{l-1})``.  Batched routines take row-major data, one observation per
row, and internally compute ``O_l = Phi(O_{l-1} @ W_l.T + b_l)``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import NumericError, ShapeError

ACTIVATIONS = ("tanh", "identity")


def _activate(kind: str, pre: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "identity":
        return pre
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind: str, out: np.ndarray) -> np.ndarray:
    # derivative expressed through the activation output
    if kind == "tanh":
        return 1.0 - out * out
    return np.ones_like(out)


@dataclass
class Network:
    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[Optional[np.ndarray]]
    activations: List[str]

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [None if b is None else np.asarray(b, dtype=float) for b in self.biases]
        self.activations = list(self.activations)
        self.validate()

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def has_bias(self) -> List[bool]:
        return [b is not None for b in self.biases]

    def validate(self) -> None:
        dims = self.layer_dims
        if any(d <= 0 for d in dims):
            raise ShapeError(f"layer dims must be positive, got {dims}")
        L = len(dims) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == L):
            raise ShapeError("weights, biases and activations need one entry per layer")
        for l, w in enumerate(self.weights):
            if w.shape != (dims[l + 1], dims[l]):
                raise ShapeError(
                    f"weights[{l}] has shape {w.shape}, expected {(dims[l + 1], dims[l])}"
                )
            b = self.biases[l]
            if b is not None and b.shape != (dims[l + 1],):
                raise ShapeError(f"biases[{l}] has shape {b.shape}, expected {(dims[l + 1],)}")
            if self.activations[l] not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activations[l]!r}")
        if not all(np.all(np.isfinite(w)) for w in self.weights) or not all(
            b is None or np.all(np.isfinite(b)) for b in self.biases
        ):
            raise NumericError("network contains non-finite parameters")

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def params(self) -> List[np.ndarray]:
        """Weights followed by the present biases; arrays are shared, not copied."""
        return list(self.weights) + [b for b in self.biases if b is not None]

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activations": list(self.activations),
            "has_bias": self.has_bias,
            "weights": [w.tolist() for w in self.weights],
            "biases": [None if b is None else b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        dims = d["layer_dims"]
        weights = [np.array(w, dtype=float).reshape(dims[l + 1], dims[l]) for l, w in enumerate(d["weights"])]
        biases = []
        for l, flag in enumerate(d["has_bias"]):
            b = d["biases"][l]
            biases.append(np.array(b, dtype=float) if flag else None)
        return cls(dims, weights, biases, d["activations"])


@dataclass
class Gradients:
    d_weights: List[np.ndarray]
    d_biases: List[Optional[np.ndarray]]

    def params(self) -> List[np.ndarray]:
        return list(self.d_weights) + [b for b in self.d_biases if b is not None]


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: Optional[List[np.ndarray]] = field(default=None, repr=False)
    second_moment: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("adam", "plain_sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def init_network(
    layer_dims: Sequence[int],
    activations: Sequence[str],
    rng: np.random.Generator,
    has_bias: Optional[Sequence[bool]] = None,
) -> Network:
    """Glorot-uniform weights, zero biases."""
    L = len(layer_dims) - 1
    if has_bias is None:
        has_bias = [True] * L
    weights, biases = [], []
    for l in range(L):
        d_in, d_out = layer_dims[l], layer_dims[l + 1]
        r = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-r, r, size=(d_out, d_in)))
        biases.append(np.zeros(d_out) if has_bias[l] else None)
    return Network(list(layer_dims), weights, biases, list(activations))


def _check_input(net: Network, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"expected inputs with {net.layer_dims[0]} columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericError("inputs contain non-finite values")
    return X


def forward_batch(net: Network, X: np.ndarray) -> List[np.ndarray]:
    """Layer outputs ``[O_0, ..., O_L]`` for a batch of row observations."""
    X = _check_input(net, X)
    outs = [X]
    for W, b, act in zip(net.weights, net.biases, net.activations):
        pre = outs[-1] @ W.T
        if b is not None:
            pre = pre + b
        outs.append(_activate(act, pre))
    return outs


def forward(net: Network, x: np.ndarray) -> List[np.ndarray]:
    """Layer outputs ``o_0..o_L`` for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != net.layer_dims[0]:
        raise ShapeError(f"expected a vector of length {net.layer_dims[0]}, got shape {x.shape}")
    return [o[0] for o in forward_batch(net, x[None, :])]


def predict(net: Network, X: np.ndarray) -> np.ndarray:
    return forward_batch(net, X)[-1]


def _check_targets(net: Network, X: np.ndarray, T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape != (np.shape(X)[0], net.layer_dims[-1]):
        raise ShapeError(
            f"targets of shape {T.shape} do not match {np.shape(X)[0]} rows x {net.layer_dims[-1]} outputs"
        )
    return T


def l2_loss(net: Network, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over rows of the squared Euclidean reconstruction error."""
    targets = _check_targets(net, inputs, targets)
    out = predict(net, inputs)
    return float(np.sum((out - targets) ** 2) / out.shape[0])


def backprop_from_outputs(net: Network, outs: List[np.ndarray], d_out: np.ndarray, input_grad: bool = False):
    """Backpropagate ``d_out`` (gradient w.r.t. the final layer output).

    With ``input_grad=True`` returns ``(gradients, d_inputs)``.
    """
    d_weights: List[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    d_biases: List[Optional[np.ndarray]] = [None] * net.n_layers
    delta = d_out * _activation_grad(net.activations[-1], outs[-1])
    for l in range(net.n_layers - 1, -1, -1):
        d_weights[l] = delta.T @ outs[l]
        if net.biases[l] is not None:
            d_biases[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * _activation_grad(net.activations[l - 1], outs[l])
    grads = Gradients(d_weights, d_biases)
    if input_grad:
        return grads, delta @ net.weights[0]
    return grads


def backprop(net: Network, inputs: np.ndarray, targets: np.ndarray) -> Gradients:
    """Exact gradient of :func:`l2_loss` w.r.t. every weight and bias."""
    targets = _check_targets(net, inputs, targets)
    outs = forward_batch(net, inputs)
    n = outs[0].shape[0]
    return backprop_from_outputs(net, outs, 2.0 * (outs[-1] - targets) / n)


def optimizer_step(net: Network, grads: Gradients, state: OptimizerState):
    """Apply one update in place and return ``(net, state)``."""
    params = net.params()
    gparams = grads.params()
    if len(params) != len(gparams) or any(p.shape != g.shape for p, g in zip(params, gparams)):
        raise ShapeError("gradient shapes do not match the network")
    if not all(np.all(np.isfinite(g)) for g in gparams):
        raise NumericError("non-finite gradient")
    state.step_count += 1
    lr = state.learning_rate
    if state.kind == "plain_sgd":
        for p, g in zip(params, gparams):
            p -= lr * g
        return net, state
    if state.first_moment is None:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    b1, b2, t = state.beta1, state.beta2, state.step_count
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, gparams, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state
