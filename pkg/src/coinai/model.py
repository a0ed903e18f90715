"""From-scratch 1-D convolutional classifiers built from architecture specs.

Layers run in order: valid-padding stride-1 convolutions (cross-correlation,
single input channel at the bottom), flatten, fully-connected layers, then
a softmax head of ``num_classes`` units trained with cross-entropy. All
arithmetic is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grammar import (
    ArchitectureSpec,
    Grammar,
    MalformedSentence,
    ResourceLimits,
    bundled_grammar,
    check_feasibility,
    parse_architecture,
)
from .hashing import sha3_512

MAGIC = b"CAIM"
VERSION = 1


class ShapeMismatch(ValueError):
    pass


class NumericalDivergence(ArithmeticError):
    pass


class MalformedBlob(ValueError):
    pass


# ---------------------------------------------------------------- activations


def _act(name: str | None, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free logistic
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- network


@dataclass
class Layer:
    kind: str  # "conv" | "fc" | "head"
    weight: np.ndarray
    bias: np.ndarray
    activation: str | None = None


@dataclass
class Network:
    spec: ArchitectureSpec | None
    sentence: str
    input_width: int
    num_classes: int
    layers: list[Layer]
    train_loss: float | None = None
    steps_taken: int = 0

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def layer_shapes(spec: ArchitectureSpec, input_width: int, num_classes: int):
    """``(kind, weight_shape, bias_shape, activation)`` per layer, forward order."""
    shapes = []
    channels, width = 1, input_width
    for c in spec.conv_layers:
        if c.filter_size > width or c.filter_size < 1 or c.num_filters < 1:
            raise ShapeMismatch(f"conv filter {c.filter_size} on width {width}")
        shapes.append(("conv", (c.num_filters, channels, c.filter_size), (c.num_filters,), c.activation))
        channels, width = c.num_filters, width - c.filter_size + 1
    fan_in = channels * width
    for f in spec.fc_layers:
        shapes.append(("fc", (f.num_units, fan_in), (f.num_units,), f.activation))
        fan_in = f.num_units
    shapes.append(("head", (num_classes, fan_in), (num_classes,), None))
    return shapes


def _fans(kind: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if kind == "conv":
        f, c, k = shape
        return c * k, f * k
    return shape[1], shape[0]


def instantiate(
    spec: ArchitectureSpec,
    input_width: int,
    num_classes: int,
    seed: int,
    sentence: str = "",
    limits: ResourceLimits = ResourceLimits(),
) -> Network:
    check_feasibility(spec, input_width, limits, num_classes).raise_if_infeasible()
    rng = np.random.default_rng(seed)
    layers = []
    for kind, wshape, bshape, act in layer_shapes(spec, input_width, num_classes):
        fan_in, fan_out = _fans(kind, wshape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(kind, rng.uniform(-bound, bound, size=wshape), np.zeros(bshape), act))
    return Network(spec, sentence, input_width, num_classes, layers)


def _forward(net: Network, X: np.ndarray):
    """Forward pass keeping ``(input, pre-activation, output)`` per layer."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_width:
        raise ShapeMismatch(f"expected (batch, {net.input_width}), got {X.shape}")
    a = X[:, None, :]
    cache = []
    for layer in net.layers:
        if layer.kind == "conv":
            k = layer.weight.shape[2]
            windows = sliding_window_view(a, k, axis=2)  # (B, C, W', K)
            z = np.tensordot(windows, layer.weight, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
            z = z + layer.bias[None, :, None]
            out = _act(layer.activation, z)
        else:
            if a.ndim == 3:
                a = a.reshape(a.shape[0], -1)
            z = a @ layer.weight.T + layer.bias
            out = softmax(z) if layer.kind == "head" else _act(layer.activation, z)
        cache.append((a, z, out))
        a = out
    return a, cache


def forward(net: Network, X) -> np.ndarray:
    """Class probabilities, one row per input vector."""
    return _forward(net, X)[0]


def _loss_and_grads(net: Network, X: np.ndarray, y: np.ndarray, want_grads: bool = True):
    probs, cache = _forward(net, X)
    n = X.shape[0]
    picked = probs[np.arange(n), y]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    if not want_grads:
        return loss, None
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n  # d loss / d logits
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        a_in, z, out = cache[idx]
        if layer.kind != "head":
            if delta.shape != out.shape:
                delta = delta.reshape(out.shape)
            delta = delta * _act_grad(layer.activation, z, out)
        if layer.kind == "conv":
            f, c, k = layer.weight.shape
            windows = sliding_window_view(a_in, k, axis=2)
            gw = np.tensordot(delta, windows, axes=([0, 2], [0, 2]))  # (F, C, K)
            gb = delta.sum(axis=(0, 2))
            if idx > 0:
                d_in = np.zeros_like(a_in)
                width_out = delta.shape[2]
                for j in range(k):
                    d_in[:, :, j:j + width_out] += np.tensordot(delta, layer.weight[:, :, j], axes=([1], [0])).transpose(0, 2, 1)
                delta = d_in
        else:
            gw = delta.T @ a_in
            gb = delta.sum(axis=0)
            if idx > 0:
                delta = delta @ layer.weight
        grads[idx] = (gw, gb)
    return loss, grads


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    optimizer: str = "sgd_momentum"  # "sgd" | "sgd_momentum"
    momentum: float = 0.9
    seed: int = 0
    time_budget: int | None = None  # cap on optimizer steps; None = run all epochs

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def total_steps(self, n_train: int) -> int:
        per_epoch = -(-n_train // min(self.batch_size, n_train))
        steps = self.epochs * per_epoch
        return steps if self.time_budget is None else min(steps, self.time_budget)


def train(net: Network, X, y, cfg: TrainConfig) -> Network:
    """Mini-batch gradient descent on cross-entropy; mutates and returns ``net``.

    A batch size larger than the training set means full-batch updates.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if y.min() < 0 or y.max() >= net.num_classes:
        raise ValueError("labels out of range")
    n = X.shape[0]
    batch = min(cfg.batch_size, n)
    budget = cfg.total_steps(n)
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(p) for p in net.parameters()]
    mu = cfg.momentum if cfg.optimizer == "sgd_momentum" else 0.0
    steps = 0
    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        if steps >= budget:
            break
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch):
            if steps >= budget:
                break
            idx = order[start:start + batch]
            loss, grads = _loss_and_grads(net, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericalDivergence(f"loss became {loss} at step {steps}")
            params = net.parameters()
            flat = [g for pair in grads for g in pair]
            for p, g, v in zip(params, flat, velocity):
                v *= mu
                v -= cfg.learning_rate * g
                p += v
                if not np.all(np.isfinite(p)):
                    raise NumericalDivergence(f"non-finite weight at step {steps}")
            epoch_losses.append(loss)
            steps += 1
    net.steps_taken += steps
    if epoch_losses:
        net.train_loss = float(np.mean(epoch_losses))
    return net


def evaluate(net: Network, X, y, metric: str = "accuracy") -> float:
    """Fraction of rows whose argmax class matches the label."""
    if metric != "accuracy":
        raise ValueError(f"unsupported metric {metric!r}")
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("validation set is empty")
    predicted = np.argmax(forward(net, X), axis=1)
    return int(np.count_nonzero(predicted == y)) / int(y.size)


# ---------------------------------------------------------------- serialization


def serialize(net: Network) -> bytes:
    sentence = net.sentence.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack(">HII", VERSION, net.input_width, net.num_classes),
        struct.pack(">I", len(sentence)),
        sentence,
    ]
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.weight, dtype=">f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype=">f8").tobytes())
    return b"".join(parts)


def read_header(blob: bytes) -> tuple[int, int, str, int]:
    """``(input_width, num_classes, sentence, payload_offset)`` of a blob."""
    if len(blob) < 18 or blob[:4] != MAGIC:
        raise MalformedBlob("bad magic or truncated header")
    version, width, classes = struct.unpack(">HII", blob[4:14])
    if version != VERSION:
        raise MalformedBlob(f"unsupported version {version}")
    (length,) = struct.unpack(">I", blob[14:18])
    if 18 + length > len(blob):
        raise MalformedBlob("truncated sentence")
    try:
        sentence = blob[18:18 + length].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedBlob("sentence is not utf-8") from exc
    return width, classes, sentence, 18 + length


def deserialize(blob: bytes, grammar: Grammar | None = None) -> Network:
    width, classes, sentence, offset = read_header(blob)
    if width < 1 or classes < 2:
        raise MalformedBlob("bad input width or class count")
    try:
        spec = parse_architecture(sentence, grammar or bundled_grammar())
        shapes = layer_shapes(spec, width, classes)
    except (MalformedSentence, ShapeMismatch) as exc:
        raise MalformedBlob(f"header architecture unusable: {exc}") from exc
    expected = offset + 8 * sum(int(np.prod(w)) + int(np.prod(b)) for _, w, b, _ in shapes)
    if len(blob) != expected:
        raise MalformedBlob(f"blob is {len(blob)} bytes, architecture needs {expected}")
    layers = []
    for kind, wshape, bshape, act in shapes:
        arrays = []
        for shape in (wshape, bshape):
            count = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype=">f8", count=count, offset=offset).astype(np.float64)
            arrays.append(arr.reshape(shape))
            offset += 8 * count
        layers.append(Layer(kind, arrays[0], arrays[1], act))
    return Network(spec, sentence, width, classes, layers)


def model_digest(blob: bytes) -> bytes:
    return sha3_512(blob)


# ---------------------------------------------------------------- gradient check


def gradient_errors(net: Network, X, y, eps: float = 1e-5, n_weights: int = 200, seed: int = 0, floor: float = 1e-8):
    """Relative errors between backprop and central differences.

    Weights are sampled without replacement until ``n_weights`` have been
    checked. A weight is skipped when nudging it by ``eps`` flips any relu
    unit across its kink, where finite differences are meaningless.
    Returns ``(errors, analytic, numeric)`` arrays.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _, grads = _loss_and_grads(net, X, y)
    params = net.parameters()
    flat_grads = [g for pair in grads for g in pair]
    sizes = [p.size for p in params]
    offsets = np.cumsum([0] + sizes)
    order = np.random.default_rng(seed).permutation(offsets[-1])
    has_relu = any(layer.activation == "relu" for layer in net.layers)

    def relu_masks():
        _, cache = _forward(net, X)
        return [z > 0 for layer, (_, z, _) in zip(net.layers, cache) if layer.activation == "relu"]

    errors, analytic, numeric = [], [], []
    for flat_idx in order:
        if len(errors) >= n_weights:
            break
        which = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = np.unravel_index(int(flat_idx - offsets[which]), params[which].shape)
        p = params[which]
        saved = p[local]
        base_masks = relu_masks() if has_relu else None
        p[local] = saved + eps
        plus, _ = _loss_and_grads(net, X, y, want_grads=False)
        plus_masks = relu_masks() if has_relu else None
        p[local] = saved - eps
        minus, _ = _loss_and_grads(net, X, y, want_grads=False)
        minus_masks = relu_masks() if has_relu else None
        p[local] = saved
        if has_relu and not all(
            np.array_equal(b, q) and np.array_equal(b, r) for b, q, r in zip(base_masks, plus_masks, minus_masks)
        ):
            continue
        num = (plus - minus) / (2 * eps)
        ana = float(flat_grads[which][local])
        errors.append(abs(ana - num) / max(abs(ana), abs(num), floor))
        analytic.append(ana)
        numeric.append(num)
    return np.array(errors), np.array(analytic), np.array(numeric)


def gradient_check(net: Network, X, y, eps: float = 1e-5, n_weights: int = 200, seed: int = 0) -> float:
    """Largest relative error between analytic and finite-difference gradients."""
    errors, _, _ = gradient_errors(net, X, y, eps, n_weights, seed)
    return float(errors.max()) if errors.size else 0.0


def network_from_layers(layers: Sequence[Layer], input_width: int, num_classes: int) -> Network:
    """Wrap hand-built layers (no grammar sentence); used for probes and tests."""
    return Network(None, "", input_width, num_classes, list(layers))
