"""Differentiable loss models with exact analytic gradients.

Every model works on a flat float64 parameter vector so that devices,
teams, and the server all exchange the same representation. Three model
families are provided:

* ``QuadraticModel``  - (a/2) * ||theta - c||^2, the strongly convex test
  oracle (its curvature equals both its strong-convexity and smoothness
  constant).
* ``MclrModel``       - multi-class logistic regression, softmax cross
  entropy with optional l2 regularization.
* ``MlpModel``        - small fully connected ReLU network with a softmax
  head, for the smooth non-convex setting.

``finite_diff_grad`` is the independent central-difference oracle used by
the test suite to certify the analytic gradients.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError, UnsupportedOperationError


def as_param_vector(values) -> np.ndarray:
    """Coerce to a 1-D float64 array (the shared parameter representation)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    return arr


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(np.asarray(arr).reshape(-1)))[0])
        raise NumericError(f"non-finite value in {what} (first offending entry {bad})")
    return arr


@dataclass
class Batch:
    """A device-local dataset slice: feature matrix plus integer labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigurationError("batch features must be a 2-D matrix")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ConfigurationError("batch labels must align with feature rows")
        if len(self.features) < 1:
            raise ConfigurationError("batch must hold at least one sample")
        if np.any(self.labels < 0):
            raise ConfigurationError("labels must be non-negative class ids")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class QuadraticSpec:
    """f(theta) = (curvature/2) * ||theta - center||^2."""

    center: np.ndarray
    curvature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", as_param_vector(self.center))
        if not self.curvature > 0:
            raise ConfigurationError("quadratic curvature must be positive")


@dataclass(frozen=True)
class MclrSpec:
    n_features: int
    n_classes: int
    l2: float = 1e-4

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 2:
            raise ConfigurationError("MCLR needs >=1 feature and >=2 classes")
        if self.l2 < 0:
            raise ConfigurationError("l2 strength must be non-negative")

    @property
    def dim(self) -> int:
        return self.n_classes * (self.n_features + 1)


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths [n_features, hidden..., n_classes]; ReLU hidden units."""

    widths: tuple = (60, 64, 32, 10)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 3 or any(w < 1 for w in widths):
            raise ConfigurationError("MLP needs input, >=1 hidden, and output widths")

    @property
    def dim(self) -> int:
        return sum(
            self.widths[i] * self.widths[i + 1] + self.widths[i + 1]
            for i in range(len(self.widths) - 1)
        )

    @property
    def n_classes(self) -> int:
        return self.widths[-1]


class LossModel(ABC):
    """Pure, read-only objective: value, gradient, and (optionally) prediction."""

    dim: int

    @abstractmethod
    def loss(self, theta: np.ndarray, data: Batch | None) -> float:
        ...

    @abstractmethod
    def grad(self, theta: np.ndarray, data: Batch | None) -> np.ndarray:
        ...

    def predict(self, theta: np.ndarray, features: np.ndarray) -> np.ndarray:
        raise UnsupportedOperationError(
            f"{type(self).__name__} has no classifier head"
        )

    def _check_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = as_param_vector(theta)
        if theta.size != self.dim:
            raise ConfigurationError(
                f"parameter dim {theta.size} does not match model dim {self.dim}"
            )
        return theta


class QuadraticModel(LossModel):
    """Isotropic quadratic; ignores the data batch."""

    def __init__(self, spec: QuadraticSpec):
        self.spec = spec
        self.dim = spec.center.size

    def loss(self, theta, data=None) -> float:
        theta = self._check_theta(theta)
        diff = theta - self.spec.center
        value = 0.5 * self.spec.curvature * float(diff @ diff)
        if not np.isfinite(value):
            raise NumericError("non-finite quadratic loss")
        return value

    def grad(self, theta, data=None) -> np.ndarray:
        theta = self._check_theta(theta)
        return check_finite(self.spec.curvature * (theta - self.spec.center), "quadratic gradient")


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class MclrModel(LossModel):
    """Softmax regression. Parameters are packed class-major: for each class
    one weight row followed by its bias, so dim = n_classes * (n_features + 1).
    """

    def __init__(self, spec: MclrSpec):
        self.spec = spec
        self.dim = spec.dim

    def _unpack(self, theta: np.ndarray):
        table = theta.reshape(self.spec.n_classes, self.spec.n_features + 1)
        return table[:, :-1], table[:, -1]

    def _scores(self, theta, features) -> np.ndarray:
        weights, bias = self._unpack(theta)
        return features @ weights.T + bias

    def _check_batch(self, data: Batch):
        if data is None:
            raise ConfigurationError("MCLR requires a data batch")
        if data.features.shape[1] != self.spec.n_features:
            raise ConfigurationError(
                f"batch has {data.features.shape[1]} features, model expects {self.spec.n_features}"
            )
        if np.any(data.labels >= self.spec.n_classes):
            raise ConfigurationError("batch label exceeds model class count")

    def loss(self, theta, data) -> float:
        theta = self._check_theta(theta)
        self._check_batch(data)
        logp = _log_softmax_rows(self._scores(theta, data.features))
        per_sample = -logp[np.arange(len(data)), data.labels]
        if not np.all(np.isfinite(per_sample)):
            bad = int(np.flatnonzero(~np.isfinite(per_sample))[0])
            raise NumericError(f"non-finite MCLR loss at sample {bad}")
        return float(per_sample.mean() + 0.5 * self.spec.l2 * (theta @ theta))

    def grad(self, theta, data) -> np.ndarray:
        theta = self._check_theta(theta)
        self._check_batch(data)
        n = len(data)
        probs = _softmax_rows(self._scores(theta, data.features))
        probs[np.arange(n), data.labels] -= 1.0
        probs /= n
        grad_w = probs.T @ data.features
        grad_b = probs.sum(axis=0)
        packed = np.concatenate([grad_w, grad_b[:, None]], axis=1).reshape(-1)
        packed += self.spec.l2 * theta
        return check_finite(packed, "MCLR gradient")

    def predict(self, theta, features) -> np.ndarray:
        theta = self._check_theta(theta)
        features = np.asarray(features, dtype=np.float64)
        # np.argmax resolves ties toward the lowest class index.
        return np.argmax(self._scores(theta, features), axis=1)


class MlpModel(LossModel):
    """Fully connected ReLU network with a softmax cross-entropy head.

    Parameters are the per-layer (weight matrix, bias vector) pairs
    flattened in layer order; weight W_l has shape (in_width, out_width).
    """

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.dim = spec.dim

    def _unpack(self, theta: np.ndarray):
        layers = []
        offset = 0
        widths = self.spec.widths
        for i in range(len(widths) - 1):
            n_in, n_out = widths[i], widths[i + 1]
            w = theta[offset : offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = theta[offset : offset + n_out]
            offset += n_out
            layers.append((w, b))
        return layers

    def _forward(self, layers, features):
        activations = [features]
        z = features
        for w, b in layers[:-1]:
            z = np.maximum(z @ w + b, 0.0)
            activations.append(z)
        w, b = layers[-1]
        scores = z @ w + b
        return activations, scores

    def _check_batch(self, data: Batch):
        if data is None:
            raise ConfigurationError("MLP requires a data batch")
        if data.features.shape[1] != self.spec.widths[0]:
            raise ConfigurationError(
                f"batch has {data.features.shape[1]} features, model expects {self.spec.widths[0]}"
            )
        if np.any(data.labels >= self.spec.n_classes):
            raise ConfigurationError("batch label exceeds model class count")

    def loss(self, theta, data) -> float:
        theta = self._check_theta(theta)
        self._check_batch(data)
        _, scores = self._forward(self._unpack(theta), data.features)
        logp = _log_softmax_rows(scores)
        per_sample = -logp[np.arange(len(data)), data.labels]
        if not np.all(np.isfinite(per_sample)):
            bad = int(np.flatnonzero(~np.isfinite(per_sample))[0])
            raise NumericError(f"non-finite MLP loss at sample {bad}")
        return float(per_sample.mean())

    def grad(self, theta, data) -> np.ndarray:
        theta = self._check_theta(theta)
        self._check_batch(data)
        layers = self._unpack(theta)
        activations, scores = self._forward(layers, data.features)
        n = len(data)

        delta = _softmax_rows(scores)
        delta[np.arange(n), data.labels] -= 1.0
        delta /= n

        grads = [None] * len(layers)
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            a_in = activations[li]
            grads[li] = (a_in.T @ delta, delta.sum(axis=0))
            if li > 0:
                delta = (delta @ w.T) * (activations[li] > 0.0)

        flat = np.concatenate([np.concatenate([gw.reshape(-1), gb]) for gw, gb in grads])
        return check_finite(flat, "MLP gradient")

    def predict(self, theta, features) -> np.ndarray:
        theta = self._check_theta(theta)
        features = np.asarray(features, dtype=np.float64)
        _, scores = self._forward(self._unpack(theta), features)
        return np.argmax(scores, axis=1)


def finite_diff_grad(model: LossModel, theta, data, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+h e_k) - f(x-h e_k)) / 2h."""
    if not h > 0:
        raise ConfigurationError("finite-difference step must be positive")
    theta = as_param_vector(theta)
    out = np.empty_like(theta)
    probe = theta.copy()
    for k in range(theta.size):
        orig = probe[k]
        probe[k] = orig + h
        hi = model.loss(probe, data)
        probe[k] = orig - h
        lo = model.loss(probe, data)
        probe[k] = orig
        out[k] = (hi - lo) / (2.0 * h)
    return out
