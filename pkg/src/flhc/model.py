"""Differentiable classifiers exchanged between server and clients as flat vectors.

Two architectures are supported: a two-conv-layer CNN for 28x28 single-channel
images (the fidelity model) and a one-hidden-layer ReLU MLP used where test
speed matters. Both expose loss, analytic gradient and prediction over a flat
float64 parameter vector, and both are pure functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

PAPER_CNN = "paper_cnn"
FAST_MLP = "fast_mlp"

_CNN_CONV1_CHANNELS = 32
_CNN_CONV2_CHANNELS = 64
_CNN_KERNEL = 5
_CNN_DENSE_UNITS = 512


@dataclass(frozen=True)
class ModelSpec:
    """Architecture plus the shapes needed to build it."""

    architecture: str
    input_shape: tuple[int, int, int] = (28, 28, 1)
    num_classes: int = 10
    hidden_units: int = 128

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.architecture not in (PAPER_CNN, FAST_MLP):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ValueError(f"bad input_shape {self.input_shape}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.architecture == PAPER_CNN and self.input_shape != (28, 28, 1):
            raise ValueError("the CNN is defined for 28x28x1 inputs only")
        if self.architecture == FAST_MLP and self.hidden_units < 1:
            raise ValueError("hidden_units must be at least 1")


@dataclass
class ParameterVector:
    """All model weights as one flat float64 array plus the layer layout.

    ``layout`` is an ordered tuple of (layer_name, shape); the flat array is
    the row-major concatenation of the layers in that order.
    """

    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("parameter values must be a flat 1-D array")
        expected = sum(math.prod(shape) for _, shape in self.layout)
        if self.values.size != expected:
            raise ValueError(f"layout wants {expected} values, got {self.values.size}")

    @property
    def size(self) -> int:
        return int(self.values.size)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def as_arrays(self) -> dict[str, np.ndarray]:
        """Structured view of the flat vector; arrays share its memory."""
        out = {}
        offset = 0
        for name, shape in self.layout:
            size = math.prod(shape)
            out[name] = self.values[offset : offset + size].reshape(shape)
            offset += size
        return out

    @classmethod
    def from_arrays(
        cls,
        layout: tuple[tuple[str, tuple[int, ...]], ...],
        arrays: dict[str, np.ndarray],
    ) -> "ParameterVector":
        flat = np.concatenate([np.asarray(arrays[name], dtype=np.float64).ravel() for name, _ in layout])
        return cls(flat, layout)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Model:
    """Stateless evaluator for one ModelSpec.

    Every method is a pure function of (parameters, data); instances hold only
    the layout and can be shared freely across threads.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        h, w, c = spec.input_shape
        self.input_size = h * w * c
        if spec.architecture == PAPER_CNN:
            flat = (h // 4) * (w // 4) * _CNN_CONV2_CHANNELS
            self.layout = (
                ("conv1_w", (_CNN_KERNEL, _CNN_KERNEL, c, _CNN_CONV1_CHANNELS)),
                ("conv1_b", (_CNN_CONV1_CHANNELS,)),
                ("conv2_w", (_CNN_KERNEL, _CNN_KERNEL, _CNN_CONV1_CHANNELS, _CNN_CONV2_CHANNELS)),
                ("conv2_b", (_CNN_CONV2_CHANNELS,)),
                ("fc1_w", (flat, _CNN_DENSE_UNITS)),
                ("fc1_b", (_CNN_DENSE_UNITS,)),
                ("fc2_w", (_CNN_DENSE_UNITS, spec.num_classes)),
                ("fc2_b", (spec.num_classes,)),
            )
        else:
            self.layout = (
                ("fc1_w", (self.input_size, spec.hidden_units)),
                ("fc1_b", (spec.hidden_units,)),
                ("fc2_w", (spec.hidden_units, spec.num_classes)),
                ("fc2_b", (spec.num_classes,)),
            )
        self.num_parameters = sum(math.prod(shape) for _, shape in self.layout)

    # -- parameters ---------------------------------------------------------

    def init_parameters(self, seed) -> ParameterVector:
        """Fan-in-scaled uniform weights, zero biases; deterministic per seed."""
        rng = np.random.default_rng(seed)
        parts = []
        for name, shape in self.layout:
            if name.endswith("_b"):
                parts.append(np.zeros(math.prod(shape)))
                continue
            fan_in = math.prod(shape[:-1])
            limit = 1.0 / math.sqrt(fan_in)
            parts.append(rng.uniform(-limit, limit, size=math.prod(shape)))
        return ParameterVector(np.concatenate(parts), self.layout)

    def _values(self, params) -> np.ndarray:
        values = params.values if isinstance(params, ParameterVector) else np.asarray(params)
        if values.size != self.num_parameters:
            raise ValueError(f"expected {self.num_parameters} parameters, got {values.size}")
        return values

    def _views(self, values: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        offset = 0
        for name, shape in self.layout:
            size = math.prod(shape)
            out[name] = values[offset : offset + size].reshape(shape)
            offset += size
        return out

    def _check_batch(self, images: np.ndarray, labels: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
        images = np.asarray(images, dtype=np.float64)
        if images.shape == self.spec.input_shape:
            images = images[None]
        if images.ndim != 4 or images.shape[1:] != self.spec.input_shape:
            raise ValueError(f"batch shape {images.shape} does not match input {self.spec.input_shape}")
        if images.shape[0] == 0:
            raise ValueError("batch must be non-empty")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64).ravel()
            if labels.shape[0] != images.shape[0]:
                raise ValueError("images and labels disagree on batch size")
            if labels.min() < 0 or labels.max() >= self.spec.num_classes:
                raise ValueError("label outside class range")
        return images, labels

    # -- forward / backward -------------------------------------------------

    def _forward(self, values: np.ndarray, images: np.ndarray, keep: bool):
        p = self._views(values)
        cache = {}
        if self.spec.architecture == PAPER_CNN:
            a1 = kernels.conv2d_forward(images, p["conv1_w"], p["conv1_b"])
            r1 = _relu(a1)
            p1, s1 = kernels.maxpool2_forward(r1)
            a2 = kernels.conv2d_forward(p1, p["conv2_w"], p["conv2_b"])
            r2 = _relu(a2)
            p2, s2 = kernels.maxpool2_forward(r2)
            feats = p2.reshape(p2.shape[0], -1)
            if keep:
                cache.update(a1=a1, s1=s1, p1=p1, a2=a2, s2=s2, p2=p2)
        else:
            feats = images.reshape(images.shape[0], -1)
        z1 = feats @ p["fc1_w"] + p["fc1_b"]
        hidden = _relu(z1)
        logits = hidden @ p["fc2_w"] + p["fc2_b"]
        if keep:
            cache.update(feats=feats, z1=z1, hidden=hidden)
        return logits, cache, p

    def loss(self, params, images, labels) -> float:
        """Mean softmax cross-entropy over the batch."""
        images, labels = self._check_batch(images, labels)
        values = self._values(params)
        logits, _, _ = self._forward(values, images, keep=False)
        logp = _log_softmax(logits)
        return float(-logp[np.arange(len(labels)), labels].mean())

    def loss_and_gradient(self, params, images, labels):
        """Mean cross-entropy plus its analytic gradient, same layout as params."""
        images, labels = self._check_batch(images, labels)
        values = self._values(params)
        logits, cache, p = self._forward(values, images, keep=True)
        n = logits.shape[0]

        logp = _log_softmax(logits)
        loss = float(-logp[np.arange(n), labels].mean())

        dlogits = np.exp(logp)
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n

        grads = {}
        hidden, z1, feats = cache["hidden"], cache["z1"], cache["feats"]
        grads["fc2_w"] = hidden.T @ dlogits
        grads["fc2_b"] = dlogits.sum(axis=0)
        dhidden = dlogits @ p["fc2_w"].T
        dz1 = dhidden * (z1 > 0.0)
        grads["fc1_w"] = feats.T @ dz1
        grads["fc1_b"] = dz1.sum(axis=0)

        if self.spec.architecture == PAPER_CNN:
            dfeats = dz1 @ p["fc1_w"].T
            dp2 = dfeats.reshape(cache["p2"].shape)
            dr2 = kernels.maxpool2_backward(dp2, cache["s2"])
            da2 = dr2 * (cache["a2"] > 0.0)
            dp1, grads["conv2_w"], grads["conv2_b"] = kernels.conv2d_backward(
                cache["p1"], p["conv2_w"], da2
            )
            dr1 = kernels.maxpool2_backward(dp1, cache["s1"])
            da1 = dr1 * (cache["a1"] > 0.0)
            _, grads["conv1_w"], grads["conv1_b"] = kernels.conv2d_backward(
                images, p["conv1_w"], da1, compute_dx=False
            )

        flat = np.concatenate([grads[name].ravel() for name, _ in self.layout])
        if isinstance(params, ParameterVector):
            return loss, ParameterVector(flat, self.layout)
        return loss, flat

    def predict(self, params, images) -> np.ndarray:
        """Argmax class per example; ties resolve to the lowest class index."""
        images, _ = self._check_batch(images, None)
        values = self._values(params)
        logits, _, _ = self._forward(values, images, keep=False)
        return logits.argmax(axis=1)

    def accuracy(self, params, images, labels) -> float:
        images, labels = self._check_batch(images, labels)
        return float((self.predict(params, images) == labels).mean())


def init_parameters(spec: ModelSpec, seed) -> ParameterVector:
    return Model(spec).init_parameters(seed)
