"""Softmax regression and a one-hidden-layer ReLU network over flat weight vectors."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

LOG_CLAMP = 1e-12
_LOG_MIN = np.log(LOG_CLAMP)


class ModelKind(str, Enum):
    SOFTMAX_REGRESSION = "softmax_regression"
    DENSE_NET = "dense_net"


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError("features must be n x d and labels length n")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def by_class(self) -> list["LabeledDataset"]:
        return [self.subset(self.labels == i) for i in range(self.num_classes)]

    @staticmethod
    def concat(parts: list["LabeledDataset"]) -> "LabeledDataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        return LabeledDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].num_classes,
        )


@dataclass(frozen=True)
class Model:
    """A model kind, its layer widths, and one flat float64 weight vector.

    ``dims`` is ``(d, C)`` for softmax regression and ``(d, h, C)`` for the
    dense network. Weights are packed layer by layer, each weight matrix
    row-major followed by its bias.
    """

    kind: ModelKind
    dims: tuple[int, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        expected = num_weights(self.kind, self.dims)
        if w.shape != (expected,):
            raise ValueError(f"expected {expected} weights, got shape {w.shape}")
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "weights", w)

    def with_weights(self, w: np.ndarray) -> "Model":
        return replace(self, weights=w)

    @property
    def num_classes(self) -> int:
        return self.dims[-1]


def num_weights(kind: ModelKind | str, dims: tuple[int, ...]) -> int:
    kind = ModelKind(kind)
    if kind == ModelKind.SOFTMAX_REGRESSION:
        d, c = dims
        return d * c + c
    d, h, c = dims
    return d * h + h + h * c + c


def init_model(kind: ModelKind | str, dims: tuple[int, ...], seed: int, scale: float = 0.05) -> Model:
    rng = np.random.default_rng(seed)
    n = num_weights(kind, dims)
    return Model(ModelKind(kind), tuple(dims), rng.uniform(-scale, scale, size=n))


def _layers(model: Model, w: np.ndarray):
    if model.kind == ModelKind.SOFTMAX_REGRESSION:
        d, c = model.dims
        return (w[: d * c].reshape(d, c), w[d * c :])
    d, h, c = model.dims
    i = 0
    W1 = w[i : i + d * h].reshape(d, h)
    i += d * h
    b1 = w[i : i + h]
    i += h
    W2 = w[i : i + h * c].reshape(h, c)
    i += h * c
    b2 = w[i : i + c]
    return (W1, b1, W2, b2)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def logits(model: Model, x: np.ndarray) -> np.ndarray:
    layers = _layers(model, model.weights)
    if model.kind == ModelKind.SOFTMAX_REGRESSION:
        W, b = layers
        return x @ W + b
    W1, b1, W2, b2 = layers
    return np.maximum(x @ W1 + b1, 0.0) @ W2 + b2


def predict_proba(model: Model, x: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits(model, x)))


def _check(data: LabeledDataset):
    if len(data) == 0:
        raise ValueError("empty dataset")


def loss(model: Model, data: LabeledDataset) -> float:
    """Mean cross-entropy, log-probabilities clamped at ``log(1e-12)``."""
    _check(data)
    lp = _log_softmax(logits(model, data.features))
    picked = lp[np.arange(len(data)), data.labels]
    return float(-np.maximum(picked, _LOG_MIN).mean())


def gradient(model: Model, data: LabeledDataset) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the flat weights."""
    _check(data)
    return gradient_arrays(model, model.weights, data.features, data.labels)


def gradient_arrays(
    model: Model, w: np.ndarray, x: np.ndarray, y: np.ndarray, sample_weight: np.ndarray | None = None
) -> np.ndarray:
    """:func:`gradient` at weights ``w`` on raw arrays, skipping validation.

    ``sample_weight`` replaces the uniform ``1/n`` weighting of the mean.
    """
    n = y.size
    scale = (1.0 / n) if sample_weight is None else sample_weight[:, None]
    layers = _layers(model, w)
    if model.kind == ModelKind.SOFTMAX_REGRESSION:
        W, b = layers
        g = np.exp(_log_softmax(x @ W + b))
        g[np.arange(n), y] -= 1.0
        g *= scale
        return np.concatenate([(x.T @ g).ravel(), g.sum(axis=0)])
    W1, b1, W2, b2 = layers
    z = x @ W1 + b1
    a = np.maximum(z, 0.0)
    g = np.exp(_log_softmax(a @ W2 + b2))
    g[np.arange(n), y] -= 1.0
    g *= scale
    gW2 = a.T @ g
    gb2 = g.sum(axis=0)
    ga = (g @ W2.T) * (z > 0)
    gW1 = x.T @ ga
    gb1 = ga.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def per_class_gradients(model: Model, per_class: list[LabeledDataset]) -> np.ndarray:
    """Row ``i``: gradient of the mean loss over class ``i`` samples (zeros if none)."""
    out = np.zeros((len(per_class), model.weights.size))
    for i, part in enumerate(per_class):
        if len(part):
            out[i] = gradient(model, part)
    return out


def evaluate(model: Model, data: LabeledDataset) -> float:
    """Fraction of samples whose argmax class (lowest index on ties) is correct."""
    _check(data)
    pred = np.argmax(logits(model, data.features), axis=1)
    return float(np.mean(pred == data.labels))
