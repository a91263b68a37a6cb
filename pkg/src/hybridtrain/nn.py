"""Minimal layered network with exact backprop, in float64 numpy.

A model is built from a JSON-friendly architecture descriptor (a list of layer
dicts), so checkpoints can rebuild it. The last layer must be ``dense``; its
parameters form the evolvable tail. The tail genome layout is the (fan_in,
classes) weight matrix flattened row-major followed by the bias.
"""

from __future__ import annotations

import copy
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DimensionError, NumericError, StateError
from .tensor import DTYPE, RngStream

EVAL_BATCH = 256


class Layer:
    kind = "layer"

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def describe(self) -> dict:
        return {"kind": self.kind}


class Conv2d(Layer):
    """Stride-1 square convolution with zero padding (im2col)."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, pad: int = 1):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.pad = pad
        self.weight = np.zeros((out_channels, in_channels, kernel, kernel), dtype=DTYPE)
        self.bias = np.zeros(out_channels, dtype=DTYPE)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)
        self._cache = None

    def init(self, rng: RngStream) -> None:
        fan_in = self.in_channels * self.kernel * self.kernel
        self.weight[...] = rng.normal(self.weight.size).reshape(self.weight.shape) * np.sqrt(2.0 / fan_in)
        self.bias[...] = 0.0

    def params(self):
        return [self.weight, self.bias]

    def grads(self):
        return [self.dweight, self.dbias]

    def describe(self):
        return {"kind": self.kind, "in": self.in_channels, "out": self.out_channels,
                "kernel": self.kernel, "pad": self.pad}

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise DimensionError(f"conv2d expects {self.in_channels} channels, got {c}")
        return (self.out_channels, h + 2 * self.pad - self.kernel + 1, w + 2 * self.pad - self.kernel + 1)

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(f"conv2d expects [N, {self.in_channels}, H, W], got {x.shape}")
        n = x.shape[0]
        k, p = self.kernel, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, Ho, Wo, k, k
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        wmat = self.weight.reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.bias
        if train:
            self._cache = (x.shape, xp.shape, cols)
        return out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad):
        if self._cache is None:
            raise StateError("conv2d backward called before forward")
        xshape, xpshape, cols = self._cache
        n, f, ho, wo = grad.shape
        k, p, c = self.kernel, self.pad, self.in_channels
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, f)
        self.dweight[...] = (g2.T @ cols).reshape(self.weight.shape)
        self.dbias[...] = g2.sum(axis=0)
        dcols = (g2 @ self.weight.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros(xpshape, dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None

    def out_shape(self, shape):
        return shape

    def forward(self, x, train=True):
        mask = x > 0
        if train:
            self._mask = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        if self._mask is None:
            raise StateError("relu backward called before forward")
        return np.where(self._mask, grad, 0.0)


class MaxPool2d(Layer):
    """Non-overlapping 2-D max pooling; ties route the gradient to the first max."""

    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        self.size = size
        self._cache = None

    def describe(self):
        return {"kind": self.kind, "size": self.size}

    def out_shape(self, shape):
        c, h, w = shape
        if h % self.size or w % self.size:
            raise DimensionError(f"maxpool{self.size} needs spatial dims divisible by {self.size}, got {h}x{w}")
        return (c, h // self.size, w // self.size)

    def forward(self, x, train=True):
        n, c, h, w = x.shape
        s = self.size
        if h % s or w % s:
            raise DimensionError(f"maxpool{s} needs spatial dims divisible by {s}, got {h}x{w}")
        blocks = x.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // s, w // s, s * s)
        idx = np.argmax(blocks, axis=-1)
        if train:
            self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        if self._cache is None:
            raise StateError("maxpool backward called before forward")
        (n, c, h, w), idx = self._cache
        s = self.size
        dblocks = np.zeros((n, c, h // s, w // s, s * s), dtype=DTYPE)
        np.put_along_axis(dblocks, idx[..., None], grad[..., None], axis=-1)
        return dblocks.reshape(n, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._shape = None

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=True):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        if self._shape is None:
            raise StateError("flatten backward called before forward")
        return grad.reshape(self._shape)


class Dense(Layer):
    """Affine map ``x @ W + b`` with W of shape (fan_in, fan_out)."""

    kind = "dense"

    def __init__(self, fan_in: int, fan_out: int):
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.weight = np.zeros((fan_in, fan_out), dtype=DTYPE)
        self.bias = np.zeros(fan_out, dtype=DTYPE)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)
        self._x = None

    def init(self, rng: RngStream) -> None:
        self.weight[...] = rng.normal(self.weight.size).reshape(self.weight.shape) * np.sqrt(2.0 / self.fan_in)
        self.bias[...] = 0.0

    def params(self):
        return [self.weight, self.bias]

    def grads(self):
        return [self.dweight, self.dbias]

    def describe(self):
        return {"kind": self.kind, "in": self.fan_in, "out": self.fan_out}

    def out_shape(self, shape):
        if shape != (self.fan_in,):
            raise DimensionError(f"dense expects input ({self.fan_in},), got {shape}")
        return (self.fan_out,)

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise DimensionError(f"dense expects [N, {self.fan_in}], got {x.shape}")
        if train:
            self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad):
        if self._x is None:
            raise StateError("dense backward called before forward")
        self.dweight[...] = self._x.T @ grad
        self.dbias[...] = grad.sum(axis=0)
        return grad @ self.weight.T


def layer_from_spec(spec: dict) -> Layer:
    kind = spec["kind"]
    if kind == "conv2d":
        return Conv2d(spec["in"], spec["out"], spec.get("kernel", 3), spec.get("pad", 1))
    if kind == "relu":
        return ReLU()
    if kind == "maxpool2d":
        return MaxPool2d(spec.get("size", 2))
    if kind == "flatten":
        return Flatten()
    if kind == "dense":
        return Dense(spec["in"], spec["out"])
    raise DimensionError(f"unknown layer kind {kind!r}")


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy."""
    z = scores - scores.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logsum - z[np.arange(len(labels)), labels]))


class Model:
    """Layer stack + softmax cross-entropy; the final dense layer is the tail."""

    def __init__(self, input_shape: Sequence[int], layers: list[Layer]):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = layers
        if not layers or not isinstance(layers[-1], Dense):
            raise DimensionError("the last layer must be dense (the evolvable tail)")
        shape = self.input_shape
        for layer in layers:
            shape = layer.out_shape(shape)
        self.classes = shape[0]
        self._scores = None
        self._labels = None

    @property
    def tail(self) -> Dense:
        return self.layers[-1]

    @property
    def body(self) -> list[Layer]:
        return self.layers[:-1]

    def architecture(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [layer.describe() for layer in self.layers]}

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def parameter_names(self) -> list[str]:
        names = []
        for i, layer in enumerate(self.layers):
            for pname in ("weight", "bias")[: len(layer.params())]:
                names.append(f"{i}.{layer.kind}.{pname}")
        return names

    def clone(self) -> "Model":
        return copy.deepcopy(self)

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise DimensionError(f"expected batch of shape [N, {', '.join(map(str, self.input_shape))}], got {x.shape}")

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        self._check_input(x)
        for layer in self.layers:
            x = layer.forward(x, train)
        if train:
            self._scores = x
        return x

    def loss(self, labels: np.ndarray) -> float:
        if self._scores is None:
            raise StateError("loss requested before forward")
        return cross_entropy(self._scores, labels)

    def backward(self, labels: np.ndarray) -> list[np.ndarray]:
        """Gradients of the mean cross-entropy of the last forward batch."""
        if self._scores is None:
            raise StateError("backward called before forward")
        labels = np.asarray(labels)
        if labels.shape != (self._scores.shape[0],):
            raise DimensionError(f"labels shape {labels.shape} does not match batch {self._scores.shape[0]}")
        grad = softmax(self._scores)
        grad[np.arange(len(labels)), labels] -= 1.0
        grad /= len(labels)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        self._scores = None
        return [g.copy() for g in self.gradients()]

    def body_features(self, x: np.ndarray, batch: int = EVAL_BATCH) -> np.ndarray:
        """Penultimate activations, computed in fixed-size chunks."""
        self._check_input(x)
        out = []
        for start in range(0, x.shape[0], batch):
            h = x[start:start + batch]
            for layer in self.body:
                h = layer.forward(h, train=False)
            out.append(h)
        return np.concatenate(out, axis=0)


def build_model(architecture: dict, rng: RngStream | None = None) -> Model:
    layers = [layer_from_spec(spec) for spec in architecture["layers"]]
    model = Model(architecture["input_shape"], layers)
    if rng is not None:
        for i, layer in enumerate(model.layers):
            if hasattr(layer, "init"):
                layer.init(rng.substream(i))
    return model


def small_conv_net(input_shape: Sequence[int] = (3, 32, 32), classes: int = 10) -> dict:
    """Architecture descriptor for the desk-scale stand-in for VGG16."""
    c, h, w = input_shape
    return {
        "input_shape": [c, h, w],
        "layers": [
            {"kind": "conv2d", "in": c, "out": 16, "kernel": 3, "pad": 1},
            {"kind": "relu"},
            {"kind": "maxpool2d", "size": 2},
            {"kind": "conv2d", "in": 16, "out": 32, "kernel": 3, "pad": 1},
            {"kind": "relu"},
            {"kind": "maxpool2d", "size": 2},
            {"kind": "flatten"},
            {"kind": "dense", "in": 32 * (h // 4) * (w // 4), "out": classes},
        ],
    }


def sgd_step(model: Model, gradients: Sequence[np.ndarray], learning_rate: float) -> None:
    params = model.parameters()
    if len(gradients) != len(params):
        raise DimensionError(f"expected {len(params)} gradients, got {len(gradients)}")
    for p, g in zip(params, gradients):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    for p, g in zip(params, gradients):
        p -= learning_rate * g


def tail_length(model: Model) -> int:
    return model.tail.fan_in * model.tail.fan_out + model.tail.fan_out


def get_tail_weights(model: Model) -> np.ndarray:
    tail = model.tail
    return np.concatenate([tail.weight.ravel(), tail.bias]).astype(DTYPE)


def set_tail_weights(model: Model, w: np.ndarray) -> None:
    tail = model.tail
    w = np.asarray(w, dtype=DTYPE)
    if w.shape != (tail_length(model),):
        raise DimensionError(f"tail genome must have length {tail_length(model)}, got {w.shape}")
    split = tail.fan_in * tail.fan_out
    tail.weight[...] = w[:split].reshape(tail.weight.shape)
    tail.bias[...] = w[split:]


def tail_scores(features: np.ndarray, w: np.ndarray, fan_in: int, classes: int,
                batch: int = EVAL_BATCH) -> np.ndarray:
    """Apply a tail genome to precomputed penultimate features."""
    split = fan_in * classes
    weight = w[:split].reshape(fan_in, classes)
    bias = w[split:]
    return np.concatenate([features[s:s + batch] @ weight + bias for s in range(0, features.shape[0], batch)])


def accuracy_from_features(features: np.ndarray, labels: np.ndarray, w: np.ndarray,
                           fan_in: int, classes: int) -> float:
    scores = tail_scores(features, w, fan_in, classes)
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def evaluate(model: Model, split) -> float:
    """Accuracy on a dataset split (anything with ``images`` and ``labels``)."""
    if len(split.labels) == 0:
        raise DataError("cannot evaluate on an empty split")
    feats = model.body_features(split.images)
    return accuracy_from_features(feats, split.labels, get_tail_weights(model), model.tail.fan_in, model.classes)
