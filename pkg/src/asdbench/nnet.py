"""Small fully-connected network with hand-written backprop and a seeded Adam loop.

Everything is float64 and single-threaded in the Python sense; given a seed,
training is bit-reproducible.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, FormatError, ShapeError

ACTIVATIONS = ("relu", "linear", "softmax")
LOSSES = ("mse", "cross_entropy")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")


@dataclass
class Mlp:
    layers: list = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ShapeError(f"layer widths {a.weight.shape} -> {b.weight.shape} do not chain")
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ConfigError("softmax is only allowed on the output layer")

    @property
    def dims(self) -> tuple:
        if not self.layers:
            return ()
        return (self.layers[0].weight.shape[0],) + tuple(l.weight.shape[1] for l in self.layers)

    @classmethod
    def create(cls, dims, activations=None, seed: int = 0, output: str = "linear") -> "Mlp":
        """Xavier-uniform weights, zero biases. Hidden layers default to relu."""
        dims = list(dims)
        if len(dims) < 2:
            raise ConfigError("need at least input and output widths")
        if activations is None:
            activations = ["relu"] * (len(dims) - 2) + [output]
        if len(activations) != len(dims) - 1:
            raise ConfigError("one activation per layer required")
        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append(Layer(rng.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out), act))
        return cls(layers)

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def predict(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        # zero is allowed: it is the documented no-op optimizer
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(net: Mlp, x):
    """Return (output, cache). Accepts one vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != net.dims[0]:
        raise ShapeError(f"input width {x.shape[-1] if x.ndim else 0} != network input {net.dims[0]}")
    inputs, pre = [], []
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight + layer.bias
        pre.append(z)
        if layer.activation == "relu":
            a = np.maximum(z, 0.0)
        elif layer.activation == "softmax":
            a = _softmax(z)
        else:
            a = z
    cache = {"inputs": inputs, "pre": pre, "output": a, "single": single}
    return (a[0] if single else a), cache


def backward(net: Mlp, cache, loss_grad, through_output: bool = True) -> list:
    """Gradients [(dW, db), ...] for each layer.

    ``loss_grad`` is dL/d(output). With ``through_output=False`` it is taken
    to be dL/d(pre-activation) of the last layer instead, which is how the
    fused softmax + cross-entropy gradient is fed in.
    """
    g = np.asarray(loss_grad, dtype=np.float64)
    if cache["single"] and g.ndim == 1:
        g = g[None, :]
    if len(cache["pre"]) != len(net.layers) or g.shape != cache["pre"][-1].shape:
        raise ShapeError(f"loss gradient {g.shape} does not match cached output {cache['pre'][-1].shape}")
    grads = [None] * len(net.layers)
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        z = cache["pre"][i]
        if layer.weight.shape != (cache["inputs"][i].shape[1], z.shape[1]):
            raise ShapeError("stale cache: layer shapes changed since forward")
        if i == len(net.layers) - 1 and not through_output:
            dz = g
        elif layer.activation == "relu":
            dz = g * (z > 0)
        elif layer.activation == "softmax":
            s = cache["output"]
            dz = s * (g - np.sum(g * s, axis=1, keepdims=True))
        else:
            dz = g
        grads[i] = (cache["inputs"][i].T @ dz, dz.sum(axis=0))
        g = dz @ layer.weight.T
    return grads


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def cross_entropy_from_logits(logits, labels):
    """Mean negative log-likelihood and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - log_z
    n = logits.shape[0]
    loss = -float(np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def batch_loss_and_grads(net: Mlp, x, target=None, labels=None, loss: str = "mse"):
    out, cache = forward(net, x)
    if loss == "mse":
        value, g = mse_loss(out, x if target is None else target)
        return value, backward(net, cache, g)
    if net.layers[-1].activation != "softmax":
        raise ConfigError("cross_entropy needs a softmax output layer")
    value, g = cross_entropy_from_logits(cache["pre"][-1], labels)
    return value, backward(net, cache, g, through_output=False)


def train(net: Mlp, data, config: TrainConfig, labels=None, targets=None):
    """Adam on mini-batches reshuffled every epoch. Returns (trained copy, per-epoch losses).

    For ``mse`` the reconstruction target defaults to the input rows.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigError("training data must be a non-empty 2-D array")
    if (labels is not None) != (config.loss == "cross_entropy"):
        raise ConfigError("labels are required for cross_entropy and only for it")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (x.shape[0],):
            raise ShapeError("one label per training row required")
    if targets is not None:
        targets = np.asarray(targets, dtype=np.float64)

    net = net.copy()
    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    step = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(x.shape[0])
        total = 0.0
        for start in range(0, x.shape[0], config.batch_size):
            idx = order[start : start + config.batch_size]
            value, grads = batch_loss_and_grads(
                net,
                x[idx],
                target=None if targets is None else targets[idx],
                labels=None if labels is None else labels[idx],
                loss=config.loss,
            )
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            total += value * idx.size
            step += 1
            flat = [g for pair in grads for g in pair]
            c1 = 1.0 - ADAM_BETA1**step
            c2 = 1.0 - ADAM_BETA2**step
            for p, g, mi, vi in zip(params, flat, m, v):
                mi *= ADAM_BETA1
                mi += (1.0 - ADAM_BETA1) * g
                vi *= ADAM_BETA2
                vi += (1.0 - ADAM_BETA2) * g * g
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + ADAM_EPS)
        epoch_loss = total / x.shape[0]
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        history.append(epoch_loss)
    return net, history


# Checkpoint layout (little-endian):
#   b"ASDM" | u32 version | u32 n_layers | u32 dims[n_layers + 1]
#   | u8 activation code per layer | f64 params (W row-major then b, per layer)

MAGIC = b"ASDM"
FORMAT_VERSION = 1


def save_checkpoint(net: Mlp, path) -> None:
    dims = net.dims
    blob = bytearray(MAGIC)
    blob += struct.pack("<II", FORMAT_VERSION, len(net.layers))
    blob += struct.pack(f"<{len(dims)}I", *dims)
    blob += bytes(ACTIVATIONS.index(l.activation) for l in net.layers)
    for p in net.params():
        blob += np.ascontiguousarray(p, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> Mlp:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    dims = struct.unpack_from(f"<{n_layers + 1}I", blob, offset)
    offset += 4 * (n_layers + 1)
    codes = blob[offset : offset + n_layers]
    offset += n_layers
    layers = []
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = np.frombuffer(blob, "<f8", fan_in * fan_out, offset).reshape(fan_in, fan_out)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(blob, "<f8", fan_out, offset)
        offset += 8 * fan_out
        if codes[i] >= len(ACTIVATIONS):
            raise FormatError(f"{path}: unknown activation code {codes[i]}")
        layers.append(Layer(w.astype(np.float64), b.astype(np.float64), ACTIVATIONS[codes[i]]))
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return Mlp(layers)
