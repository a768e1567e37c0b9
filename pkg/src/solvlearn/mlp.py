"""Two-class MLP with softmax posteriors, trained from scratch with Adam.

Training is a pure function of (data, hyperparameters): fresh seeded
initialization, seeded shuffles, and a best-loss snapshot make repeated fits
bitwise identical. The posterior output feeds the acquisition functions, so
``predict_proba`` guarantees finite, positive, sum-to-one rows even for inputs
of extreme magnitude.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = ["LabeledDataset", "MlpClassifier", "save_model", "load_model"]

CHECKPOINT_VERSION = 1

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_LOG_CLIP = 1e-12  # posterior clamp inside the loss only


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature rows paired with one-hot (non-solvable, solvable) labels."""

    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n, 2) one-hot

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        if features.ndim != 2 or labels.shape != (features.shape[0], 2):
            raise ValueError(f"shape mismatch: features {features.shape}, labels {labels.shape}")
        if not (np.isin(labels, (0.0, 1.0)).all() and (labels.sum(axis=1) == 1.0).all()):
            raise ValueError("labels must be one-hot rows")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def class_counts(self) -> tuple[int, int]:
        counts = self.labels.sum(axis=0)
        return int(counts[0]), int(counts[1])

    def take(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(self.features[indices], self.labels[indices])


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    # keep entries strictly positive even when a logit gap underflows exp()
    p = np.clip(p, 1e-300, None)
    return p / p.sum(axis=1, keepdims=True)


def _as_one_hot(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2 and y.shape[1] == 2:
        out = np.asarray(y, dtype=np.float64)
    elif y.ndim == 1:
        out = np.zeros((y.shape[0], 2))
        out[np.arange(y.shape[0]), y.astype(int)] = 1.0
    else:
        raise ValueError(f"labels must be (n,) class indices or (n, 2) one-hot, got {y.shape}")
    if not (np.isin(out, (0.0, 1.0)).all() and (out.sum(axis=1) == 1.0).all()):
        raise ValueError("labels are not valid one-hot pairs")
    return out


class MlpClassifier(BaseEstimator, ClassifierMixin):
    """Fully-connected softmax classifier for binary solvability labels.

    Parameters mirror sklearn conventions; `fit` accepts class indices or
    one-hot label pairs. The output layer always has width 2.
    """

    def __init__(
        self,
        hidden_layer_sizes: tuple[int, ...] = (64, 64),
        activation: str = "relu",
        epochs: int = 300,
        batch_size: int = 32,
        learning_rate: float = 1e-3,
        l2: float = 0.0,
        weight_init: str = "he",
        seed: int = 0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.l2 = l2
        self.weight_init = weight_init
        self.seed = seed

    # ------------------------------------------------------------------ setup

    def _check_params(self):
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight_init not in ("he", "xavier"):
            raise ValueError(f"unknown weight_init {self.weight_init!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if any(h < 1 for h in self.hidden_layer_sizes):
            raise ValueError("hidden layer sizes must be >= 1")

    def _init_layers(self, n_features: int, rng: np.random.Generator):
        sizes = [n_features, *self.hidden_layer_sizes, 2]
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / fan_in) if self.weight_init == "he" else np.sqrt(1.0 / fan_in)
            layers.append((rng.normal(0.0, scale, (fan_in, fan_out)), np.zeros(fan_out)))
        return layers

    def _hidden(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    # ---------------------------------------------------------------- forward

    def _forward_cached(self, layers, X):
        acts = [X]
        for w, b in layers[:-1]:
            acts.append(self._hidden(acts[-1] @ w + b))
        w, b = layers[-1]
        return acts, acts[-1] @ w + b

    def _posteriors(self, layers, X):
        _, logits = self._forward_cached(layers, X)
        return _softmax(logits)

    def _backprop(self, layers, X, Y):
        """Exact cross-entropy gradients, mean over the batch."""
        acts, logits = self._forward_cached(layers, X)
        delta = (_softmax(logits) - Y) / X.shape[0]
        grads: list[tuple[np.ndarray, np.ndarray]] = []
        for i in range(len(layers) - 1, -1, -1):
            grads.insert(0, (acts[i].T @ delta, delta.sum(axis=0)))
            if i > 0:
                delta = delta @ layers[i][0].T
                a = acts[i]
                delta = delta * (a > 0) if self.activation == "relu" else delta * (1.0 - a * a)
        return grads

    def _ce_loss(self, layers, X, Y) -> float:
        p = np.clip(self._posteriors(layers, X), _LOG_CLIP, 1.0 - _LOG_CLIP)
        return float(-np.mean(np.sum(Y * np.log(p), axis=1)))

    # -------------------------------------------------------------------- fit

    def fit(self, X, y):
        self._check_params()
        X = check_array(X, dtype=np.float64)
        Y = _as_one_hot(y)
        if Y.shape[0] != X.shape[0]:
            raise ValueError("feature and label row counts differ")
        counts = Y.sum(axis=0)
        if counts.min() == 0:
            raise ValueError("training data must contain both classes")

        rng = np.random.default_rng(self.seed)
        layers = self._init_layers(X.shape[1], rng)
        m_state = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
        v_state = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
        step = 0

        loss_curve = [self._ce_loss(layers, X, Y)]
        best_loss = loss_curve[0]
        best = [(w.copy(), b.copy()) for w, b in layers]

        n = X.shape[0]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start : start + self.batch_size]
                grads = self._backprop(layers, X[batch], Y[batch])
                step += 1
                bc1 = 1.0 - _ADAM_BETA1**step
                bc2 = 1.0 - _ADAM_BETA2**step
                for i, ((w, b), (gw, gb)) in enumerate(zip(layers, grads)):
                    if self.l2 > 0.0:
                        gw = gw + self.l2 * w
                    mw, mb = m_state[i]
                    vw, vb = v_state[i]
                    mw = _ADAM_BETA1 * mw + (1 - _ADAM_BETA1) * gw
                    mb = _ADAM_BETA1 * mb + (1 - _ADAM_BETA1) * gb
                    vw = _ADAM_BETA2 * vw + (1 - _ADAM_BETA2) * gw**2
                    vb = _ADAM_BETA2 * vb + (1 - _ADAM_BETA2) * gb**2
                    m_state[i] = (mw, mb)
                    v_state[i] = (vw, vb)
                    w = w - self.learning_rate * (mw / bc1) / (np.sqrt(vw / bc2) + _ADAM_EPS)
                    b = b - self.learning_rate * (mb / bc1) / (np.sqrt(vb / bc2) + _ADAM_EPS)
                    layers[i] = (w, b)
            epoch_loss = self._ce_loss(layers, X, Y)
            loss_curve.append(epoch_loss)
            if epoch_loss < best_loss:
                best_loss = epoch_loss
                best = [(w.copy(), b.copy()) for w, b in layers]

        self.layers_ = best
        self.layer_sizes_ = [X.shape[1], *self.hidden_layer_sizes, 2]
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.loss_curve_ = loss_curve
        self.best_loss_ = best_loss
        return self

    # -------------------------------------------------------------- inference

    def _validate_X(self, X):
        check_is_fitted(self, "layers_")
        X = check_array(X, dtype=np.float64, ensure_2d=False)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X, single

    def predict_proba(self, X) -> np.ndarray:
        """Class posteriors, rows (p(non-solvable|x), p(solvable|x))."""
        X, single = self._validate_X(X)
        p = self._posteriors(self.layers_, X)
        return p[0] if single else p

    def predict(self, X) -> np.ndarray:
        X, single = self._validate_X(X)
        pred = self.classes_[np.argmax(self._posteriors(self.layers_, X), axis=1)]
        return pred[0] if single else pred

    def loss(self, X, y) -> float:
        """Mean cross-entropy of the posteriors against one-hot labels."""
        X, _ = self._validate_X(np.atleast_2d(X))
        return self._ce_loss(self.layers_, X, _as_one_hot(y))

    def loss_gradients(self, X, y) -> list[tuple[np.ndarray, np.ndarray]]:
        """Exact (dW, db) per layer of ``loss`` on this batch (no l2 term)."""
        X, _ = self._validate_X(np.atleast_2d(X))
        return self._backprop(self.layers_, X, _as_one_hot(y))

    def score(self, X, y, sample_weight=None) -> float:
        """Fraction of rows whose argmax posterior matches the argmax label."""
        X, _ = self._validate_X(np.atleast_2d(X))
        Y = _as_one_hot(y)
        pred = np.argmax(self._posteriors(self.layers_, X), axis=1)
        return float(np.mean(pred == np.argmax(Y, axis=1)))


def save_model(path: str | Path, model: MlpClassifier, normalizer=None) -> None:
    """Checkpoint a fitted model (and optional fitted normalizer) to .npz."""
    check_is_fitted(model, "layers_")
    payload = {
        "version": np.array(CHECKPOINT_VERSION),
        "layer_sizes": np.array(model.layer_sizes_),
        "activation": np.array(model.activation),
        "params": np.array(json.dumps(model.get_params())),
    }
    for i, (w, b) in enumerate(model.layers_):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    if normalizer is not None:
        check_is_fitted(normalizer, "feature_min_")
        payload["feature_min"] = normalizer.feature_min_
        payload["feature_max"] = normalizer.feature_max_
    np.savez(path, **payload)


def load_model(path: str | Path):
    """Load a checkpoint; returns (model, normalizer-or-None)."""
    from .sampling import MinMaxNormalizer

    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = json.loads(str(data["params"]))
        if isinstance(params.get("hidden_layer_sizes"), list):
            params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
        model = MlpClassifier(**params)
        sizes = [int(s) for s in data["layer_sizes"]]
        model.layers_ = [(data[f"w{i}"], data[f"b{i}"]) for i in range(len(sizes) - 1)]
        model.layer_sizes_ = sizes
        model.n_features_in_ = sizes[0]
        model.classes_ = np.array([0, 1])
        normalizer = None
        if "feature_min" in data:
            normalizer = MinMaxNormalizer()
            normalizer.feature_min_ = data["feature_min"]
            normalizer.feature_max_ = data["feature_max"]
            normalizer.n_features_in_ = normalizer.feature_min_.shape[0]
    return model, normalizer
