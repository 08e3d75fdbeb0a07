"""Stacked autoencoder for compressing embedding vectors to a short code.

Three tanh encoder layers, three decoder layers with an identity output,
trained by minibatch gradient descent on mean-squared reconstruction error.
Everything is plain numpy so gradients can be checked against finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AutoencoderConfigError(ValueError):
    pass


class AutoencoderTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class AutoencoderParams:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]  # weights[i]: (layer_dims[i], layer_dims[i+1])
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def code_dim(self) -> int:
        return self.layer_dims[len(self.layer_dims) // 2]

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "layer_dims": list(self.layer_dims),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activation": "tanh-hidden/identity-output",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderParams":
        return cls(
            layer_dims=tuple(d["layer_dims"]),
            weights=[np.asarray(w, dtype=np.float64) for w in d["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in d["biases"]],
        )


@dataclass(frozen=True)
class TrainLog:
    mse: list[float]
    epochs: int
    seed: int


def init(dims, seed: int, strict_six_layers: bool = True) -> AutoencoderParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3 or dims != dims[::-1]:
        raise AutoencoderConfigError(f"layer dims must be symmetric, got {dims}")
    if strict_six_layers and len(dims) != 7:
        raise AutoencoderConfigError(
            f"expected 7 layer dims (3 encoder + 3 decoder weight layers), got {len(dims)}"
        )
    if dims[len(dims) // 2] >= dims[0]:
        raise AutoencoderConfigError("code dimension must be smaller than the input dimension")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AutoencoderParams(layer_dims=dims, weights=weights, biases=biases)


def _forward_batch(p: AutoencoderParams, X: np.ndarray):
    """Activations per layer; tanh everywhere except the final layer."""
    acts = [X]
    a = X
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ w + b
        a = z if i == last else np.tanh(z)
        acts.append(a)
    return acts


def forward(p: AutoencoderParams, x) -> tuple[np.ndarray, np.ndarray]:
    """(code, reconstruction) for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.input_dim,):
        raise ValueError(f"expected input of dim {p.input_dim}, got {x.shape}")
    acts = _forward_batch(p, x[None, :])
    code_layer = len(p.layer_dims) // 2
    return acts[code_layer][0].copy(), acts[-1][0].copy()


def encode(p: AutoencoderParams, X) -> np.ndarray:
    """Bottleneck codes for a batch of rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.input_dim:
        raise ValueError(f"expected (n, {p.input_dim}) input, got {X.shape}")
    code_layer = len(p.layer_dims) // 2
    return _forward_batch(p, X)[code_layer]


def loss_and_grads(p: AutoencoderParams, X: np.ndarray):
    """Reconstruction MSE over a batch and its parameter gradients."""
    n, d = X.shape
    acts = _forward_batch(p, X)
    recon = acts[-1]
    diff = recon - X
    loss = float(np.mean(diff * diff))

    grad_w = [None] * len(p.weights)
    grad_b = [None] * len(p.biases)
    delta = 2.0 * diff / (n * d)  # identity output layer
    for i in range(len(p.weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ p.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, grad_w, grad_b


def train(
    p: AutoencoderParams,
    data,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
) -> tuple[AutoencoderParams, TrainLog]:
    """Minibatch gradient descent on reconstruction MSE.

    Per-epoch MSE is evaluated on the full training data after each epoch's
    updates; a non-finite loss aborts with the offending epoch named.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a nonempty matrix")
    if X.shape[1] != p.input_dim:
        raise ValueError(f"expected input dim {p.input_dim}, got {X.shape[1]}")
    if epochs <= 0 or batch_size <= 0 or learning_rate < 0:
        raise ValueError("epochs and batch_size must be positive, learning_rate non-negative")

    rng = np.random.default_rng(seed)
    weights = [w.copy() for w in p.weights]
    biases = [b.copy() for b in p.biases]
    params = AutoencoderParams(p.layer_dims, weights, biases)
    history: list[float] = []
    n = X.shape[0]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = X[order[start : start + batch_size]]
            _, gw, gb = loss_and_grads(params, batch)
            for i in range(len(weights)):
                weights[i] -= learning_rate * gw[i]
                biases[i] -= learning_rate * gb[i]
        epoch_mse = float(np.mean((_forward_batch(params, X)[-1] - X) ** 2))
        if not np.isfinite(epoch_mse):
            raise AutoencoderTrainingError(f"non-finite reconstruction loss at epoch {epoch}")
        history.append(epoch_mse)
    return params, TrainLog(mse=history, epochs=epochs, seed=seed)


def encode_all(p: AutoencoderParams, table) -> tuple[list[str], list[str], np.ndarray]:
    """Codes for every key of an embedding table.

    Returns (column names emb_0..emb_{d-1}, table keys, code matrix).
    """
    if table.dim != p.input_dim:
        raise ValueError(f"table dim {table.dim} does not match model input dim {p.input_dim}")
    codes = encode(p, table.vectors) if len(table.keys) else np.zeros((0, p.code_dim))
    names = [f"emb_{i}" for i in range(p.code_dim)]
    return names, list(table.keys), codes
