"""Desk-scale binary classifiers trained with mini-batch SGD.

Three kinds are provided: logistic regression, a one-hidden-layer MLP
(tanh), and a tiny convolutional net (3x3 conv, tanh, 2x2 mean pooling,
dense head).  All expose the scikit-learn estimator API plus weight
get/set and a single-epoch training step, which is what the federated
loop drives.  Training is bit-deterministic: the epoch shuffle stream is
a pure function of the seed and how many epochs the model has seen.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .validation import as_float_array, check_binary_labels, check_consistent_length

_PROB_EPS = 1e-12
_INIT_STREAM = 0
_EPOCH_STREAM = 1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


class _SGDBinaryClassifier(BaseEstimator, ClassifierMixin):
    """Shared SGD/backprop machinery; subclasses define the network."""

    kind: str = ""

    def __init__(self, learning_rate=0.1, batch_size=32, epochs=10, seed=0):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    # -- parameter lifecycle ------------------------------------------------

    def init_params(self, input_dim: int) -> "_SGDBinaryClassifier":
        """Draw weights uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), zero biases."""
        if input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {input_dim}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(self.seed), spawn_key=(_INIT_STREAM,))
        )
        self.input_dim_ = int(input_dim)
        self.weights_ = self._draw_params(self.input_dim_, rng)
        self.epochs_seen_ = 0
        self.classes_ = np.array([0, 1])
        return self

    def get_weights(self) -> list[np.ndarray]:
        self._check_initialized()
        return [w.copy() for w in self.weights_]

    def set_weights(self, weights) -> None:
        self._check_initialized()
        if len(weights) != len(self.weights_):
            raise ValueError(f"expected {len(self.weights_)} tensors, got {len(weights)}")
        new = [as_float_array(w, f"weights[{i}]") for i, w in enumerate(weights)]
        for current, candidate in zip(self.weights_, new):
            if current.shape != candidate.shape:
                raise ValueError(
                    f"weight shape mismatch: {candidate.shape} vs {current.shape}"
                )
        self.weights_ = new

    def _check_initialized(self) -> None:
        if not hasattr(self, "weights_"):
            raise RuntimeError("model parameters not initialized; call init_params or fit")

    # -- inference ------------------------------------------------------------

    def forward(self, X):
        """Probability of class 1; scalar for a single sample."""
        self._check_initialized()
        arr = as_float_array(X, "X")
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.shape[1] != self.input_dim_:
            raise ValueError(f"expected {self.input_dim_} features, got {arr.shape[1]}")
        z, _ = self._forward_logits(arr)
        p = np.clip(_sigmoid(z), _PROB_EPS, 1.0 - _PROB_EPS)
        return float(p[0]) if single else p

    def predict_proba(self, X) -> np.ndarray:
        p = np.atleast_1d(self.forward(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (np.atleast_1d(self.forward(X)) >= 0.5).astype(np.int64)

    # -- training -------------------------------------------------------------

    def fit(self, X, y) -> "_SGDBinaryClassifier":
        X, y = self._check_data(X, y, require_initialized=False)
        self.init_params(X.shape[1])
        for _ in range(int(self.epochs)):
            self.train_epoch(X, y)
        return self

    def train_epoch(self, X, y) -> float:
        """One shuffled pass of mini-batch SGD; returns the pre-update mean loss."""
        X, y = self._check_data(X, y, require_initialized=True)
        rng = np.random.default_rng(
            np.random.SeedSequence(
                entropy=int(self.seed), spawn_key=(_EPOCH_STREAM, self.epochs_seen_)
            )
        )
        order = rng.permutation(len(y))
        batch = max(1, int(self.batch_size))
        total_loss = 0.0
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            loss, grads = self.loss_and_gradients(X[idx], y[idx])
            total_loss += loss * len(idx)
            for w, g in zip(self.weights_, grads):
                w -= self.learning_rate * g
        self.epochs_seen_ += 1
        return total_loss / len(order)

    def loss(self, X, y) -> float:
        X, y = self._check_data(X, y, require_initialized=True)
        z, _ = self._forward_logits(X)
        return _bce_from_logits(z, y)

    def loss_and_gradients(self, X, y) -> tuple[float, list[np.ndarray]]:
        """Mean binary cross-entropy and its gradient w.r.t. every tensor."""
        z, cache = self._forward_logits(X)
        loss = _bce_from_logits(z, y)
        dz = (_sigmoid(z) - y) / len(y)
        return loss, self._backward(X, cache, dz)

    def _check_data(self, X, y, require_initialized: bool):
        X = as_float_array(X, "X", ndim=2)
        y = check_binary_labels(y, "y").astype(np.float64)
        n = check_consistent_length(X, y)
        if n < 1:
            raise ValueError("training data must contain at least one sample")
        if require_initialized:
            self._check_initialized()
            if X.shape[1] != self.input_dim_:
                raise ValueError(f"expected {self.input_dim_} features, got {X.shape[1]}")
        return X, y

    # -- network definition, provided by subclasses --------------------------

    def _draw_params(self, input_dim: int, rng: np.random.Generator) -> list[np.ndarray]:
        raise NotImplementedError

    def _forward_logits(self, X: np.ndarray) -> tuple[np.ndarray, tuple]:
        raise NotImplementedError

    def _backward(self, X: np.ndarray, cache: tuple, dz: np.ndarray) -> list[np.ndarray]:
        raise NotImplementedError


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LogRegClassifier(_SGDBinaryClassifier):
    """Logistic regression: sigmoid(w.x + b)."""

    kind = "logreg"

    def _draw_params(self, input_dim, rng):
        return [_uniform_fan_in(rng, input_dim, input_dim), np.zeros(1)]

    def _forward_logits(self, X):
        w, b = self.weights_
        return X @ w + b[0], ()

    def _backward(self, X, cache, dz):
        return [X.T @ dz, np.array([dz.sum()])]


class MLPClassifier(_SGDBinaryClassifier):
    """One tanh hidden layer feeding a sigmoid output unit."""

    kind = "mlp"

    def __init__(self, learning_rate=0.1, batch_size=32, epochs=10, seed=0, hidden_units=16):
        super().__init__(learning_rate, batch_size, epochs, seed)
        self.hidden_units = hidden_units

    def _draw_params(self, input_dim, rng):
        h = int(self.hidden_units)
        if h < 1:
            raise ValueError("hidden_units must be >= 1")
        return [
            _uniform_fan_in(rng, input_dim, (input_dim, h)),
            np.zeros(h),
            _uniform_fan_in(rng, h, h),
            np.zeros(1),
        ]

    def _forward_logits(self, X):
        W1, b1, w2, b2 = self.weights_
        hidden = np.tanh(X @ W1 + b1)
        return hidden @ w2 + b2[0], (hidden,)

    def _backward(self, X, cache, dz):
        (hidden,) = cache
        _, _, w2, _ = self.weights_
        d_hidden = np.outer(dz, w2) * (1.0 - hidden**2)
        return [X.T @ d_hidden, d_hidden.sum(axis=0), hidden.T @ dz, np.array([dz.sum()])]


class TinyCNNClassifier(_SGDBinaryClassifier):
    """3x3 conv bank, tanh, 2x2 mean pooling, dense sigmoid head.

    Inputs are flattened square grayscale images; input_dim must be a
    perfect square with side >= kernel + 1.
    """

    kind = "tiny_cnn"

    def __init__(self, learning_rate=0.1, batch_size=32, epochs=10, seed=0, n_filters=4):
        super().__init__(learning_rate, batch_size, epochs, seed)
        self.n_filters = n_filters

    _KERNEL = 3

    def _draw_params(self, input_dim, rng):
        side = math.isqrt(input_dim)
        if side * side != input_dim or side < self._KERNEL + 1:
            raise ValueError(
                f"tiny_cnn input_dim must be a perfect square with side >= {self._KERNEL + 1}"
            )
        self.side_ = side
        f = int(self.n_filters)
        if f < 1:
            raise ValueError("n_filters must be >= 1")
        conv_out = side - self._KERNEL + 1
        self.pooled_ = (conv_out // 2, conv_out // 2)
        flat_dim = f * self.pooled_[0] * self.pooled_[1]
        return [
            _uniform_fan_in(rng, self._KERNEL * self._KERNEL, (f, self._KERNEL, self._KERNEL)),
            np.zeros(f),
            _uniform_fan_in(rng, flat_dim, flat_dim),
            np.zeros(1),
        ]

    def _forward_logits(self, X):
        kernels, kbias, w, b = self.weights_
        n = X.shape[0]
        k, side = self._KERNEL, self.side_
        img = X.reshape(n, side, side)
        oh = ow = side - k + 1
        pre = np.zeros((n, kernels.shape[0], oh, ow))
        for u in range(k):
            for v in range(k):
                pre += img[:, None, u : u + oh, v : v + ow] * kernels[None, :, u, v, None, None]
        pre += kbias[None, :, None, None]
        act = np.tanh(pre)
        ph, pw = self.pooled_
        pooled = act[:, :, : 2 * ph, : 2 * pw].reshape(n, -1, ph, 2, pw, 2).mean(axis=(3, 5))
        flat = pooled.reshape(n, -1)
        return flat @ w + b[0], (img, act, flat)

    def _backward(self, X, cache, dz):
        img, act, flat = cache
        kernels, _, w, _ = self.weights_
        n, f = act.shape[0], act.shape[1]
        k = self._KERNEL
        ph, pw = self.pooled_
        oh, ow = act.shape[2], act.shape[3]

        g_w = flat.T @ dz
        g_b = np.array([dz.sum()])
        d_pool = np.outer(dz, w).reshape(n, f, ph, pw)
        d_act = np.zeros_like(act)
        d_act[:, :, : 2 * ph, : 2 * pw] = (
            np.repeat(np.repeat(d_pool, 2, axis=2), 2, axis=3) / 4.0
        )
        d_pre = d_act * (1.0 - act**2)
        g_kbias = d_pre.sum(axis=(0, 2, 3))
        g_kernels = np.zeros_like(kernels)
        for u in range(k):
            for v in range(k):
                g_kernels[:, u, v] = np.einsum(
                    "nij,nfij->f", img[:, u : u + oh, v : v + ow], d_pre
                )
        return [g_kernels, g_kbias, g_w, g_b]


MODEL_KINDS = {
    LogRegClassifier.kind: LogRegClassifier,
    MLPClassifier.kind: MLPClassifier,
    TinyCNNClassifier.kind: TinyCNNClassifier,
}


def init_model(kind: str, input_dim: int, seed: int, **hyperparams) -> _SGDBinaryClassifier:
    """Construct and initialize a model of the given kind."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    model = MODEL_KINDS[kind](seed=seed, **hyperparams)
    return model.init_params(input_dim)


def evaluate(model: _SGDBinaryClassifier, X, y) -> tuple[float, float]:
    """Accuracy at threshold 0.5 and mean binary cross-entropy."""
    y = check_binary_labels(y, "y")
    p = np.atleast_1d(model.forward(X))
    check_consistent_length(p, y)
    loss = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1.0 - p)))
    accuracy = float(np.mean((p >= 0.5).astype(np.int64) == y))
    return accuracy, loss
