"""Dense feed-forward classifier with a softmax head.

Deliberately small: fully-connected layers, relu/tanh/identity activations,
mini-batch SGD with momentum, and traced forward passes that expose every
per-layer pre-activation and activation. The attribution rules consume those
intermediates, so the trace is a first-class object rather than a debug hook.

Models are immutable after training or loading; forward passes are pure and
safe to call concurrently.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArtifactError, NumericalError

logger = logging.getLogger(__name__)

MODEL_FILE_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "identity")


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_gradient(name: str, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation evaluated at pre-activation z.

    relu uses the 0 subgradient at z == 0 to keep everything deterministic.
    """
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class DenseLayer:
    """One fully-connected layer: activation(weights @ x + bias)."""

    weights: np.ndarray  # shape (out, in)
    bias: np.ndarray  # shape (out,)
    activation: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("layer weights must be a 2-d matrix")
        if b.shape != (w.shape[0],):
            raise ValueError(
                f"bias shape {b.shape} does not match weight rows {w.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class MlpModel:
    """An ordered stack of dense layers followed by a softmax head."""

    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("model must have at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass(frozen=True)
class ForwardTrace:
    """All intermediates of one forward pass of a single input."""

    pre_activations: tuple[np.ndarray, ...]  # z^(k) per layer
    activations: tuple[np.ndarray, ...]  # a^(k) per layer
    probabilities: np.ndarray  # softmax output
    predicted_class: int


def softmax(z: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _check_input(model: MlpModel, X: np.ndarray, batched: bool) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    expected_ndim = 2 if batched else 1
    if X.ndim != expected_ndim or X.shape[-1] != model.input_dim:
        raise ValueError(
            f"input of shape {X.shape} does not match model input_dim "
            f"{model.input_dim}"
        )
    return X


def traced_batch(
    model: MlpModel, X: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Batched forward pass returning per-layer (z, a) lists and softmax output."""
    X = _check_input(model, X, batched=True)
    a = X
    zs: list[np.ndarray] = []
    acts: list[np.ndarray] = []
    for layer in model.layers:
        z = a @ layer.weights.T + layer.bias
        a = _apply_activation(layer.activation, z)
        zs.append(z)
        acts.append(a)
    return zs, acts, softmax(a)


def logits_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Pre-softmax scores for a batch, shape (B, output_dim)."""
    X = _check_input(model, X, batched=True)
    a = X
    for layer in model.layers:
        a = _apply_activation(layer.activation, a @ layer.weights.T + layer.bias)
    return a


def forward_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    return softmax(logits_batch(model, X))


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probability vector for a single input."""
    x = _check_input(model, x, batched=False)
    return forward_batch(model, x[None, :])[0]


def forward_traced(model: MlpModel, x: np.ndarray) -> ForwardTrace:
    x = _check_input(model, x, batched=False)
    zs, acts, probs = traced_batch(model, x[None, :])
    p = probs[0]
    return ForwardTrace(
        pre_activations=tuple(z[0] for z in zs),
        activations=tuple(a[0] for a in acts),
        probabilities=p,
        predicted_class=int(np.argmax(p)),
    )


def predict_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Predicted class per row; argmax ties resolve to the lowest index."""
    return np.argmax(forward_batch(model, X), axis=1)


def predict_class(model: MlpModel, x: np.ndarray) -> int:
    return int(np.argmax(forward(model, x)))


def gradient_wrt_input(
    model: MlpModel,
    X: np.ndarray,
    targets: np.ndarray,
    through_softmax: bool = False,
) -> np.ndarray:
    """Gradient of the target score with respect to each input, batched.

    By default the score is the pre-softmax logit of `targets[b]`; with
    `through_softmax` it is the softmax probability of that class.
    """
    X = _check_input(model, X, batched=True)
    targets = np.asarray(targets, dtype=int)
    if targets.shape != (X.shape[0],):
        raise ValueError("targets must have one entry per input row")
    zs, _, probs = traced_batch(model, X)
    rows = np.arange(X.shape[0])
    if through_softmax:
        # d p_t / d logits = p_t * (onehot(t) - p)
        pt = probs[rows, targets][:, None]
        g = pt * (-probs)
        g[rows, targets] += pt[:, 0]
    else:
        g = np.zeros((X.shape[0], model.output_dim))
        g[rows, targets] = 1.0
    for layer, z in zip(reversed(model.layers), reversed(zs)):
        g = g * _activation_gradient(layer.activation, z)
        g = g @ layer.weights
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient encountered")
    return g


@dataclass(frozen=True)
class TrainConfig:
    hidden_dims: tuple[int, ...] = (32, 16)
    activation: str = "relu"
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError("hidden activation must be relu or tanh")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


def _init_layers(dims: list[int], activations: list[str], rng) -> list[DenseLayer]:
    # Uniform fan-in scaled init, bias zero: deterministic given the rng state.
    layers = []
    for (d_in, d_out), act in zip(zip(dims, dims[1:]), activations):
        bound = 1.0 / math.sqrt(d_in)
        w = rng.uniform(-bound, bound, size=(d_out, d_in))
        layers.append(DenseLayer(weights=w, bias=np.zeros(d_out), activation=act))
    return layers


def train(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    config: TrainConfig,
) -> MlpModel:
    """Train an MLP classifier with cross-entropy loss and momentum SGD.

    Expects preprocessed inputs (standardized numerics, one-hot categoricals)
    and integer labels in [0, n_classes). Fully deterministic for a given
    (X, y, config) triple.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (N, d) with one label per row")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels must lie in [0, n_classes)")

    rng = np.random.default_rng(config.seed)
    dims = [X.shape[1], *config.hidden_dims, n_classes]
    activations = [config.activation] * len(config.hidden_dims) + ["identity"]
    layers = _init_layers(dims, activations, rng)
    weights = [l.weights.copy() for l in layers]
    biases = [l.bias.copy() for l in layers]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]

    Y = np.zeros((X.shape[0], n_classes))
    Y[np.arange(X.shape[0]), y] = 1.0

    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], Y[idx]
            # forward
            a = xb
            zs, acts = [], [a]
            for w, b, act in zip(weights, biases, activations):
                z = a @ w.T + b
                a = _apply_activation(act, z)
                zs.append(z)
                acts.append(a)
            probs = softmax(a)
            batch_loss = -np.sum(yb * np.log(np.clip(probs, 1e-12, None)))
            epoch_loss += batch_loss
            # backward (final activation is identity, so delta is probs - y)
            delta = (probs - yb) / len(idx)
            for k in range(len(weights) - 1, -1, -1):
                if k < len(weights) - 1:
                    delta = delta * _activation_gradient(activations[k], zs[k])
                gw = delta.T @ acts[k]
                gb = delta.sum(axis=0)
                delta = delta @ weights[k]
                vel_w[k] = config.momentum * vel_w[k] - config.learning_rate * gw
                vel_b[k] = config.momentum * vel_b[k] - config.learning_rate * gb
                weights[k] += vel_w[k]
                biases[k] += vel_b[k]
        if not np.isfinite(epoch_loss):
            raise NumericalError(
                f"training diverged at epoch {epoch}: loss became non-finite "
                f"(learning_rate={config.learning_rate})"
            )

    model = MlpModel(
        layers=tuple(
            DenseLayer(weights=w, bias=b, activation=act)
            for w, b, act in zip(weights, biases, activations)
        )
    )
    logger.info(
        "trained MLP %s: final train accuracy %.4f",
        dims,
        accuracy(model, X, y),
    )
    return model


def accuracy(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict_batch(model, X) == np.asarray(y)))


def save_model(model: MlpModel, path: str | Path) -> None:
    """Write the model as a versioned JSON document with round-trip floats."""
    doc = {
        "version": MODEL_FILE_VERSION,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "layers": [
            {
                "rows": layer.out_dim,
                "cols": layer.in_dim,
                "weights": layer.weights.ravel(order="C").tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            }
            for layer in model.layers
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> MlpModel:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ArtifactError(f"malformed model file {path}: {exc}") from exc
    try:
        if doc["version"] != MODEL_FILE_VERSION:
            raise ArtifactError(
                f"unsupported model file version {doc['version']} in {path}"
            )
        layers = []
        for spec in doc["layers"]:
            w = np.asarray(spec["weights"], dtype=np.float64)
            if w.size != spec["rows"] * spec["cols"]:
                raise ArtifactError(f"weight count mismatch in {path}")
            layers.append(
                DenseLayer(
                    weights=w.reshape(spec["rows"], spec["cols"]),
                    bias=np.asarray(spec["bias"], dtype=np.float64),
                    activation=spec["activation"],
                )
            )
        model = MlpModel(layers=tuple(layers))
        if model.input_dim != doc["input_dim"] or model.output_dim != doc["output_dim"]:
            raise ArtifactError(f"declared dims do not match layers in {path}")
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed model file {path}: {exc}") from exc
    return model
