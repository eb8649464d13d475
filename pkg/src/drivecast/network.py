"""From-scratch dense network: greedy layer-wise autoencoder pretraining
plus a one-hidden-layer regression head.

Sigmoid hidden units, linear scalar output, plain mini-batch gradient
descent with optional L2. Everything is float64 and deterministic for a
fixed seed; reported losses are pure MSE (the L2 term only shapes the
update).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidArchitecture,
    NonFiniteLoss,
)
from .features import FeatureConfig, Normalizer


@dataclass
class Layer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str  # "sigmoid" | "linear"

    def __post_init__(self):
        if self.activation not in ("sigmoid", "linear"):
            raise InvalidArchitecture(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass(frozen=True)
class TrainHyperparams:
    learning_rate: float = 0.05
    epochs: int = 500
    batch_size: int = 16
    l2_lambda: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")


@dataclass
class SaeNetwork:
    """Encoder stack (all sigmoid) plus regression head."""

    encoder_layers: list[Layer]
    head_hidden: Layer
    head_output: Layer

    @property
    def layers(self) -> list[Layer]:
        return [*self.encoder_layers, self.head_hidden, self.head_output]

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    def copy(self) -> "SaeNetwork":
        return SaeNetwork(
            [l.copy() for l in self.encoder_layers],
            self.head_hidden.copy(),
            self.head_output.copy(),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return _sigmoid(z) if activation == "sigmoid" else z


def _glorot(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    s = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-s, s, size=(out_dim, in_dim))


def _init_layer(rng: np.random.Generator, out_dim: int, in_dim: int, activation: str) -> Layer:
    return Layer(_glorot(rng, out_dim, in_dim), np.zeros(out_dim), activation)


def init_network(layer_sizes: list[int], seed: int) -> SaeNetwork:
    """Random network: uniform Glorot weights, zero biases, fixed seed.

    ``layer_sizes`` is [input_dim, encoder widths..., head hidden width];
    a linear scalar output layer is appended implicitly. Two entries give
    a network with an empty encoder stack.
    """
    if len(layer_sizes) < 2:
        raise InvalidArchitecture("need at least [input_dim, head_hidden] sizes")
    if any(int(s) <= 0 for s in layer_sizes):
        raise InvalidArchitecture(f"layer sizes must be positive, got {layer_sizes}")
    sizes = [int(s) for s in layer_sizes]
    rng = np.random.default_rng(seed)
    encoder = [
        _init_layer(rng, sizes[i + 1], sizes[i], "sigmoid")
        for i in range(len(sizes) - 2)
    ]
    head_hidden = _init_layer(rng, sizes[-1], sizes[-2], "sigmoid")
    head_output = _init_layer(rng, 1, sizes[-1], "linear")
    return SaeNetwork(encoder, head_hidden, head_output)


def assemble_network(
    input_dim: int,
    encoder_layers: list[Layer],
    head_hidden_size: int,
    seed: int,
) -> SaeNetwork:
    """Pretrained encoder stack plus a freshly initialized head."""
    expected = input_dim
    for layer in encoder_layers:
        if layer.in_dim != expected:
            raise InvalidArchitecture(
                f"encoder layer expects {layer.in_dim} inputs, got {expected}"
            )
        expected = layer.out_dim
    rng = np.random.default_rng(seed)
    head_hidden = _init_layer(rng, head_hidden_size, expected, "sigmoid")
    head_output = _init_layer(rng, 1, head_hidden_size, "linear")
    return SaeNetwork([l.copy() for l in encoder_layers], head_hidden, head_output)


def encode(layers: list[Layer], X: np.ndarray) -> np.ndarray:
    """Push rows through a layer stack."""
    A = np.atleast_2d(np.asarray(X, dtype=float))
    for layer in layers:
        if A.shape[1] != layer.in_dim:
            raise DimensionMismatch(f"expected {layer.in_dim} inputs, got {A.shape[1]}")
        A = _activate(A @ layer.weights.T + layer.bias, layer.activation)
    return A


def forward_batch(net: SaeNetwork, X: np.ndarray) -> np.ndarray:
    """Predicted (normalized) speeds for a batch of feature rows."""
    return encode(net.layers, X)[:, 0]


def forward(net: SaeNetwork, x: np.ndarray) -> float:
    """Predicted (normalized) speed for a single feature vector."""
    return float(forward_batch(net, np.asarray(x, dtype=float)[None, :])[0])


def _trace(layers: list[Layer], X: np.ndarray) -> list[np.ndarray]:
    """Activations [A0=X, A1, ..., Ap] through the stack."""
    acts = [X]
    for layer in layers:
        if acts[-1].shape[1] != layer.in_dim:
            raise DimensionMismatch(
                f"expected {layer.in_dim} inputs, got {acts[-1].shape[1]}"
            )
        acts.append(_activate(acts[-1] @ layer.weights.T + layer.bias, layer.activation))
    return acts


def _backward(
    layers: list[Layer], acts: list[np.ndarray], d_out: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients (dW, db) per layer given dLoss/dOutput."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore
    dA = d_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        A_out = acts[i + 1]
        dZ = dA * A_out * (1.0 - A_out) if layer.activation == "sigmoid" else dA
        grads[i] = (dZ.T @ acts[i], dZ.sum(axis=0))
        if i > 0:
            dA = dZ @ layer.weights
    return grads


def loss_and_grads(
    layers: list[Layer], X: np.ndarray, Y: np.ndarray
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Pure MSE loss and its gradients for arbitrary layer stacks.

    ``Y`` is (batch, out_dim); the loss is the mean square error over
    every output element.
    """
    acts = _trace(layers, X)
    diff = acts[-1] - Y
    loss = float(np.mean(diff**2))
    d_out = 2.0 * diff / diff.size
    return loss, _backward(layers, acts, d_out)


def _sgd_epochs(
    layers: list[Layer],
    trainable: list[bool],
    X: np.ndarray,
    Y: np.ndarray,
    hp: TrainHyperparams,
    rng: np.random.Generator,
) -> list[float]:
    """Mini-batch gradient descent; returns per-epoch mean batch loss."""
    n = len(X)
    losses = []
    # divergence surfaces as NonFiniteLoss, so let inf/nan flow silently
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hp.epochs):
            order = rng.permutation(n)
            batch_losses = []
            for start in range(0, n, hp.batch_size):
                idx = order[start : start + hp.batch_size]
                loss, grads = loss_and_grads(layers, X[idx], Y[idx])
                batch_losses.append(loss)
                for layer, (dW, db), fit in zip(layers, grads, trainable):
                    if not fit:
                        continue
                    layer.weights -= hp.learning_rate * (dW + hp.l2_lambda * layer.weights)
                    layer.bias -= hp.learning_rate * db
            epoch_loss = float(np.mean(batch_losses))
            if not np.isfinite(epoch_loss):
                raise NonFiniteLoss(epoch)
            losses.append(epoch_loss)
    return losses


def train_autoencoder_layer(
    data: np.ndarray, hidden_size: int, hp: TrainHyperparams
) -> tuple[Layer, float]:
    """Train one reconstruction layer; returns (encoder half, final MSE).

    Encoder is sigmoid, decoder linear, weights untied; the decoder is
    discarded. The returned MSE is measured on the full dataset after
    training.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if X.size == 0:
        raise InvalidArchitecture("autoencoder training data is empty")
    if hidden_size < 1:
        raise InvalidArchitecture(f"hidden_size must be >= 1, got {hidden_size}")
    rng = np.random.default_rng(hp.seed)
    encoder = _init_layer(rng, hidden_size, X.shape[1], "sigmoid")
    decoder = _init_layer(rng, X.shape[1], hidden_size, "linear")
    layers = [encoder, decoder]
    _sgd_epochs(layers, [True, True], X, X, hp, rng)
    final_mse, _ = loss_and_grads(layers, X, X)
    return encoder, final_mse


def reconstruction_mse(encoder: Layer, decoder: Layer, X: np.ndarray) -> float:
    loss, _ = loss_and_grads([encoder, decoder], X, X)
    return loss


def pretrain_sae(
    data: np.ndarray, layer_sizes: list[int], hp: TrainHyperparams
) -> tuple[list[Layer], list[float]]:
    """Greedy layer-wise pretraining.

    Trains the first layer on the raw data, encodes the data through it,
    trains the next layer on those encodings, and so on. Returns the
    encoder stack and each layer's final reconstruction MSE.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    stack: list[Layer] = []
    mses: list[float] = []
    for li, hidden in enumerate(layer_sizes):
        layer_hp = replace(hp, seed=_stream_seed(hp.seed, li))
        layer, mse = train_autoencoder_layer(X, hidden, layer_hp)
        stack.append(layer)
        mses.append(mse)
        X = encode([layer], X)
    return stack, mses


def _stream_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def train_predictor(
    net: SaeNetwork,
    X: np.ndarray,
    y: np.ndarray,
    hp: TrainHyperparams,
    fine_tune_encoder: bool = True,
) -> list[float]:
    """Supervised training of the head (and optionally the encoder).

    Mutates ``net`` in place and returns the per-epoch training loss.
    Targets are expected normalized into [0.1, 0.9]. With
    ``fine_tune_encoder`` unset the encoder weights are not touched.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(y, dtype=float).reshape(-1, 1)
    if len(X) != len(Y):
        raise DimensionMismatch(f"{len(X)} inputs vs {len(Y)} targets")
    layers = net.layers
    trainable = [fine_tune_encoder] * len(net.encoder_layers) + [True, True]
    rng = np.random.default_rng(hp.seed)
    return _sgd_epochs(layers, trainable, X, Y, hp, rng)


def gradient_check(
    net: SaeNetwork, x: np.ndarray, target: float, epsilon: float = 1e-5
) -> float:
    """Max relative error between backprop and central finite differences.

    Checks the single-sample squared-error loss over every weight and
    bias; relative error uses a 1e-12 floor so flat regions do not
    false-alarm.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    X = np.asarray(x, dtype=float)[None, :]
    Y = np.array([[float(target)]])
    layers = net.layers
    _, grads = loss_and_grads(layers, X, Y)

    def loss_now() -> float:
        loss, _ = loss_and_grads(layers, X, Y)
        return loss

    max_rel = 0.0
    for layer, (dW, db) in zip(layers, grads):
        for arr, grad in ((layer.weights, dW), (layer.bias, db)):
            flat = arr.ravel()
            gflat = grad.ravel()
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + epsilon
                up = loss_now()
                flat[i] = saved - epsilon
                down = loss_now()
                flat[i] = saved
                numeric = (up - down) / (2.0 * epsilon)
                analytic = gflat[i]
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
                max_rel = max(max_rel, rel)
    return max_rel


@dataclass
class TrainedModel:
    """A trained network bundled with everything needed to apply it."""

    net: SaeNetwork
    feature_config: FeatureConfig
    normalizer: Normalizer
    target_normalizer: Normalizer


def _layer_to_dict(layer: Layer, role: str) -> dict:
    return {
        "role": role,
        "activation": layer.activation,
        "out_dim": layer.out_dim,
        "in_dim": layer.in_dim,
        "weights": layer.weights.ravel().tolist(),  # row-major
        "bias": layer.bias.tolist(),
    }


def _layer_from_dict(d: dict) -> Layer:
    weights = np.array(d["weights"], dtype=float).reshape(d["out_dim"], d["in_dim"])
    return Layer(weights, np.array(d["bias"], dtype=float), d["activation"])


def save_model(model: TrainedModel, path: str) -> None:
    """Write the model JSON; write-then-read reproduces outputs bitwise."""
    net = model.net
    doc = {
        "layer_sizes": [net.input_dim] + [l.out_dim for l in net.layers],
        "layers": [_layer_to_dict(l, "encoder") for l in net.encoder_layers]
        + [
            _layer_to_dict(net.head_hidden, "head_hidden"),
            _layer_to_dict(net.head_output, "head_output"),
        ],
        "feature_config": model.feature_config.to_dict(),
        "normalizer": model.normalizer.to_dict(),
        "target_normalizer": model.target_normalizer.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path: str) -> TrainedModel:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    encoder = []
    head_hidden = head_output = None
    for entry in doc["layers"]:
        layer = _layer_from_dict(entry)
        if entry["role"] == "encoder":
            encoder.append(layer)
        elif entry["role"] == "head_hidden":
            head_hidden = layer
        elif entry["role"] == "head_output":
            head_output = layer
        else:
            raise InvalidArchitecture(f"unknown layer role {entry['role']!r}")
    if head_hidden is None or head_output is None:
        raise InvalidArchitecture("model file missing head layers")
    return TrainedModel(
        net=SaeNetwork(encoder, head_hidden, head_output),
        feature_config=FeatureConfig.from_dict(doc["feature_config"]),
        normalizer=Normalizer.from_dict(doc["normalizer"]),
        target_normalizer=Normalizer.from_dict(doc["target_normalizer"]),
    )
