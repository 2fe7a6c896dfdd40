"""Entropy gating of an incoming batch.

Two thresholds split a batch by prediction entropy: samples the *frozen*
pretrained model is confident about (entropy strictly below the low
threshold) are kept with their pseudo-labels as anti-forgetting ballast;
samples the *current* adapted model is uncertain about (entropy strictly
above the high threshold) become labeling candidates.  The asymmetry —
pseudo-labels always from the frozen model, uncertainty always from the
current one — is deliberate and load-bearing: pseudo-label quality must not
drift as the model adapts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models
from .models import ModelParams
from .rng import Rng


class ConfigError(ValueError):
    """Invalid configuration value (CLI maps this to exit code 2)."""


@dataclass(frozen=True)
class GateThresholds:
    """Entropy thresholds in nats; ``low <= high`` is required."""

    low: float = 1e-3
    high: float = 1e-2

    def __post_init__(self) -> None:
        if not (np.isfinite(self.low) and np.isfinite(self.high)):
            raise ConfigError("entropy thresholds must be finite")
        if self.low < 0 or self.high < 0:
            raise ConfigError("entropy thresholds must be non-negative")
        if self.low > self.high:
            raise ConfigError(f"low threshold {self.low} exceeds high threshold {self.high}")


@dataclass
class GateResult:
    """Within-batch index sets chosen by the gate."""

    low_idx: np.ndarray      # confident under the frozen model
    low_labels: np.ndarray   # pseudo-labels from the frozen model
    high_idx: np.ndarray     # uncertain under the current model


def gate_batch(x: np.ndarray, frozen: ModelParams, current: ModelParams,
               thresholds: GateThresholds) -> GateResult:
    """Split a batch into low-entropy (pseudo-labelable) and high-entropy parts.

    Both inequalities are strict; a sample can satisfy both, either, or
    neither (the two sets are independent, not a partition).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D batch")
    if x.shape[0] == 0:
        empty = np.array([], dtype=np.int64)
        return GateResult(empty, empty.copy(), empty.copy())
    probs_frozen = models.predict_proba(frozen, x)
    h_frozen = models.entropy(probs_frozen)
    h_current = models.entropy(models.predict_proba(current, x))
    low_idx = np.flatnonzero(h_frozen < thresholds.low)
    high_idx = np.flatnonzero(h_current > thresholds.high)
    low_labels = np.argmax(probs_frozen[low_idx], axis=1) if low_idx.size else np.array([], dtype=np.int64)
    return GateResult(low_idx.astype(np.int64), low_labels.astype(np.int64), high_idx.astype(np.int64))


@dataclass
class PseudoLabeledSet:
    """Accumulated low-entropy samples with frozen-model pseudo-labels."""

    features: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    labels: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    steps: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def to_jsonable(self) -> dict:
        return {
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
            "steps": self.steps.tolist(),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "PseudoLabeledSet":
        feats = np.array(obj["features"], dtype=np.float64)
        if feats.size == 0:
            feats = feats.reshape(0, 0)
        return cls(feats, np.array(obj["labels"], dtype=np.int64), np.array(obj["steps"], dtype=np.int64))


def accumulate_low(prev: PseudoLabeledSet, x_new: np.ndarray, labels_new: np.ndarray,
                   step: int, cap: int | None = None, rng: Rng | None = None) -> PseudoLabeledSet:
    """Append newly gated samples; subsample uniformly back to ``cap`` if set.

    The subsample is drawn without replacement over the *union*, so every
    element (old or new) survives with equal probability, and surviving rows
    keep their original relative order.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    labels_new = np.asarray(labels_new, dtype=np.int64)
    if x_new.shape[0] != labels_new.shape[0]:
        raise ValueError("features/labels length mismatch")
    if len(prev) == 0:
        feats = x_new.copy()
        labels = labels_new.copy()
        steps = np.full(len(labels_new), step, dtype=np.int64)
    else:
        if x_new.shape[0] and x_new.shape[1] != prev.features.shape[1]:
            raise ValueError("feature dim mismatch with accumulated set")
        feats = np.concatenate([prev.features, x_new]) if x_new.shape[0] else prev.features.copy()
        labels = np.concatenate([prev.labels, labels_new])
        steps = np.concatenate([prev.steps, np.full(len(labels_new), step, dtype=np.int64)])
    if cap is not None and len(labels) > cap:
        if cap < 0:
            raise ConfigError("cap must be non-negative")
        if rng is None:
            raise ValueError("cap requires an rng")
        keep = rng.generator().choice(len(labels), size=cap, replace=False)
        keep.sort()
        feats, labels, steps = feats[keep], labels[keep], steps[keep]
    return PseudoLabeledSet(feats, labels, steps)
