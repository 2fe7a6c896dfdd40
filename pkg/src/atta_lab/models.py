"""Shallow softmax classifier with exact analytic gradients.

Everything downstream (the adaptation engine, the baselines, the bound
evaluators) runs on this one model family: an optional tanh hidden layer
followed by a linear softmax head.  The default is the plain linear model;
the hidden layer exists so penultimate-feature clustering is meaningful on
problems that need it.  All math is float64 and all randomness comes from
an explicit :class:`~atta_lab.rng.Rng`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .rng import Rng

# log arguments are clamped here so that probabilities that underflow to 0
# produce large-but-finite losses instead of -inf
_TINY = 1e-300


@dataclass
class ModelParams:
    """Parameters of the classifier; also the unit of SGD arithmetic.

    ``weights``/``biases`` are the softmax head (feature_dim x n_classes and
    n_classes).  When ``hidden_weights`` is present the head consumes
    ``tanh(x @ hidden_weights + hidden_biases)`` instead of ``x``.
    """

    weights: np.ndarray
    biases: np.ndarray
    hidden_weights: np.ndarray | None = None
    hidden_biases: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise ValueError("weights must be 2-D and biases 1-D")
        if self.weights.shape[1] != self.biases.shape[0]:
            raise ValueError("weights/biases class dimension mismatch")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.hidden_weights is not None:
            self.hidden_weights = np.asarray(self.hidden_weights, dtype=np.float64)
            self.hidden_biases = np.asarray(self.hidden_biases, dtype=np.float64)
            if self.hidden_weights.shape[1] != self.weights.shape[0]:
                raise ValueError("hidden width does not match head input dim")
        for a in self._arrays():
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite parameter value")

    def _arrays(self) -> list[np.ndarray]:
        out = [self.weights, self.biases]
        if self.hidden_weights is not None:
            out += [self.hidden_weights, self.hidden_biases]
        return out

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    @property
    def input_dim(self) -> int:
        if self.hidden_weights is not None:
            return self.hidden_weights.shape[0]
        return self.weights.shape[0]

    def param_count(self) -> int:
        """Total trainable scalar count (default capacity surrogate for bounds)."""
        return int(sum(a.size for a in self._arrays()))

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.weights.copy(),
            self.biases.copy(),
            None if self.hidden_weights is None else self.hidden_weights.copy(),
            None if self.hidden_biases is None else self.hidden_biases.copy(),
        )

    def to_jsonable(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
        }
        if self.hidden_weights is not None:
            out["hidden_weights"] = self.hidden_weights.tolist()
            out["hidden_biases"] = self.hidden_biases.tolist()
        return out

    @classmethod
    def from_jsonable(cls, obj: dict[str, Any]) -> "ModelParams":
        return cls(
            np.array(obj["weights"], dtype=np.float64),
            np.array(obj["biases"], dtype=np.float64),
            np.array(obj["hidden_weights"], dtype=np.float64) if "hidden_weights" in obj else None,
            np.array(obj["hidden_biases"], dtype=np.float64) if "hidden_biases" in obj else None,
        )


def init_params(dim: int, n_classes: int, rng: Rng, hidden: int = 0, scale: float = 0.01) -> ModelParams:
    """Small random head (and hidden layer when ``hidden > 0``)."""
    if dim < 1 or n_classes < 2:
        raise ValueError("need dim >= 1 and n_classes >= 2")
    gen = rng.generator()
    if hidden > 0:
        wh = scale * gen.standard_normal((dim, hidden))
        bh = np.zeros(hidden)
        w = scale * gen.standard_normal((hidden, n_classes))
        return ModelParams(w, np.zeros(n_classes), wh, bh)
    w = scale * gen.standard_normal((dim, n_classes))
    return ModelParams(w, np.zeros(n_classes))


def _check_features(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ValueError(f"feature dim {x.shape[1]} != model input dim {params.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature value")
    return x


def penultimate(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Representation fed to the softmax head (the clustering space)."""
    x = _check_features(params, x)
    if params.hidden_weights is None:
        return x
    return np.tanh(x @ params.hidden_weights + params.hidden_biases)


def logits(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return penultimate(params, x) @ params.weights + params.biases


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Row-wise class probabilities, rows summing to 1."""
    return softmax(logits(params, x))


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(predict_proba(params, x), axis=1)


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats per row; zero-probability terms contribute 0."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    plogp = np.where(p > 0, p * np.log(np.maximum(p, _TINY)), 0.0)
    return -plogp.sum(axis=-1)


def accuracy(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(predict(params, x) == y))


def _normalized_weights(n: int, sample_weights: np.ndarray | None) -> np.ndarray:
    if n == 0:
        raise ValueError("empty batch")
    if sample_weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample_weights must be a finite non-negative vector of batch length")
    total = w.sum()
    if total <= 0:
        raise ValueError("sample_weights must have positive total")
    return w / total


def ce_loss(params: ModelParams, x: np.ndarray, y: np.ndarray,
            sample_weights: np.ndarray | None = None) -> float:
    """Weighted-mean cross-entropy in nats."""
    x = _check_features(params, x)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= params.n_classes):
        raise ValueError("label out of range")
    u = _normalized_weights(x.shape[0], sample_weights)
    p = predict_proba(params, x)
    return float(-(u * np.log(np.maximum(p[np.arange(len(y)), y], _TINY))).sum())


def ce_loss_grad(params: ModelParams, x: np.ndarray, y: np.ndarray,
                 sample_weights: np.ndarray | None = None) -> tuple[float, ModelParams]:
    """Weighted-mean cross-entropy and its exact gradient.

    Returns ``(loss, grad)`` where ``grad`` has the same shape as ``params``.
    """
    x = _check_features(params, x)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= params.n_classes):
        raise ValueError("label out of range")
    u = _normalized_weights(x.shape[0], sample_weights)
    pen = penultimate(params, x)
    p = softmax(pen @ params.weights + params.biases)
    loss = float(-(u * np.log(np.maximum(p[np.arange(len(y)), y], _TINY))).sum())
    dlogits = p.copy()
    dlogits[np.arange(len(y)), y] -= 1.0
    dlogits *= u[:, None]
    if params.hidden_weights is None:
        grad = ModelParams(pen.T @ dlogits, dlogits.sum(axis=0))
    else:
        dpen = dlogits @ params.weights.T
        dact = dpen * (1.0 - pen**2)
        grad = ModelParams(pen.T @ dlogits, dlogits.sum(axis=0), x.T @ dact, dact.sum(axis=0))
    return loss, grad


def entropy_loss_grad(params: ModelParams, x: np.ndarray) -> tuple[float, ModelParams]:
    """Mean prediction entropy and its gradient (the unsupervised TTA objective)."""
    x = _check_features(params, x)
    n = x.shape[0]
    pen = penultimate(params, x)
    p = softmax(pen @ params.weights + params.biases)
    logp = np.log(np.maximum(p, _TINY))
    h = -(np.where(p > 0, p * logp, 0.0)).sum(axis=1)
    loss = float(h.mean())
    # dH/dz = -p * (log p + H), averaged over the batch
    dlogits = -p * (logp + h[:, None]) / n
    if params.hidden_weights is None:
        grad = ModelParams(pen.T @ dlogits, dlogits.sum(axis=0))
    else:
        dpen = dlogits @ params.weights.T
        dact = dpen * (1.0 - pen**2)
        grad = ModelParams(pen.T @ dlogits, dlogits.sum(axis=0), x.T @ dact, dact.sum(axis=0))
    return loss, grad


def sgd_step(params: ModelParams, grad: ModelParams, lr: float) -> ModelParams:
    """One plain SGD update; returns new parameters, inputs untouched."""
    if lr <= 0 or not np.isfinite(lr):
        raise ValueError("learning rate must be positive and finite")
    if params.hidden_weights is None:
        return ModelParams(params.weights - lr * grad.weights, params.biases - lr * grad.biases)
    return ModelParams(
        params.weights - lr * grad.weights,
        params.biases - lr * grad.biases,
        params.hidden_weights - lr * grad.hidden_weights,
        params.hidden_biases - lr * grad.hidden_biases,
    )
