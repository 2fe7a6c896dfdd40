"""Reference methods the engine is compared against.

Three families:

* no-learning: frozen source model, and feature re-standardization from
  test-batch statistics (the normalization-adaptation analog);
* unsupervised streaming: entropy minimization on each incoming batch
  (the classic test-time adaptation objective, all parameters updated);
* label-using selectors: random / entropy-top-k / k-means-coverage /
  entropy-weighted-clustering sample selection, run either per-batch over
  the stream at a fixed total budget (the equal-budget streaming protocol)
  or one-shot over the pooled target set.

Every labeled baseline spends its labels through the same Oracle and
fine-tunes with the same inner loop as the engine, so comparisons isolate
the *selection* policy rather than training differences.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import models
from .clustering import weighted_kmeans
from .engine import FinetuneConfig, RunReport, StepRecord, balanced_finetune
from .gating import ConfigError
from .models import ModelParams
from .rng import Rng
from .streams import Batch

SELECTOR_KINDS = ("random", "entropy", "kmeans", "clue")


def source_only_eval(phi: ModelParams,
                     eval_sets: dict[str, tuple[np.ndarray, np.ndarray]]) -> dict[str, float]:
    """Accuracy of the frozen source model on each named evaluation set."""
    return {name: models.accuracy(phi, x, y) for name, (x, y) in eval_sets.items()}


def stats_recalibrate(phi: ModelParams, x: np.ndarray) -> np.ndarray:
    """Predict after standardizing features with the batch's own statistics.

    The analog of swapping normalization statistics at test time: shifts
    and per-feature scales of the input distribution are removed before
    the frozen model sees the data.  Returns predicted labels.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-D batch with at least 2 rows")
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    sigma = np.maximum(sigma, 1e-12)
    return models.predict(phi, (x - mu) / sigma)


def entropy_min_adapt(theta: ModelParams, x: np.ndarray, steps: int, lr: float) -> ModelParams:
    """``steps`` full-batch gradient steps on mean prediction entropy."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    params = theta
    for _ in range(steps):
        _, grad = models.entropy_loss_grad(params, x)
        params = models.sgd_step(params, grad, lr)
    return params


def select_samples(kind: str, pool: np.ndarray, theta: ModelParams, budget: int,
                   rng: Rng) -> np.ndarray:
    """Pick ``budget`` pool indices under the named selection policy.

    ``random`` draws uniformly; ``entropy`` takes the top-budget prediction
    entropies; ``kmeans`` clusters the penultimate embedding into budget
    groups and keeps each group's centroid-nearest sample; ``clue`` does the
    same with per-sample entropy as clustering weight, biasing coverage
    toward uncertain regions.  Indices come back sorted ascending.
    """
    pool = np.asarray(pool, dtype=np.float64)
    n = pool.shape[0]
    if kind not in SELECTOR_KINDS:
        raise ConfigError(f"unknown selector {kind!r}; choose from {SELECTOR_KINDS}")
    if not 0 <= budget <= n:
        raise ValueError(f"budget {budget} out of range for pool of {n}")
    if budget == 0:
        return np.array([], dtype=np.int64)
    if budget == n:
        return np.arange(n, dtype=np.int64)
    if kind == "random":
        picked = rng.generator().choice(n, size=budget, replace=False)
        return np.sort(picked.astype(np.int64))
    h = models.entropy(models.predict_proba(theta, pool))
    if kind == "entropy":
        order = np.argsort(-h, kind="stable")
        return np.sort(order[:budget].astype(np.int64))
    emb = models.penultimate(theta, pool)
    weights = np.ones(n) if kind == "kmeans" else np.maximum(h, 1e-12)
    km = weighted_kmeans(emb, weights, budget, rng)
    picked = []
    for j in range(budget):
        members = np.flatnonzero(km.assignment == j)
        if members.size == 0:
            continue
        d2 = ((emb[members] - km.centroids[j]) ** 2).sum(axis=1)
        picked.append(int(members[np.argmin(d2)]))
    return np.sort(np.array(sorted(set(picked)), dtype=np.int64))


def even_budget_schedule(total: int, n_steps: int) -> list[int]:
    """Spread ``total`` labels across ``n_steps`` batches, earlier-heavy by 1."""
    if total < 0 or n_steps < 1:
        raise ValueError("need total >= 0 and n_steps >= 1")
    base, extra = divmod(total, n_steps)
    return [base + (1 if i < extra else 0) for i in range(n_steps)]


# ---------------------------------------------------------------------------
# streaming drivers (all produce RunReport-compatible step records)


def run_stream_baseline(method: str, phi: ModelParams, batches: Sequence[Batch],
                        oracle: Callable[[np.ndarray], np.ndarray], seed: int,
                        realtime_eval: Callable[[np.ndarray, np.ndarray], float] | None = None,
                        total_budget: int = 0,
                        finetune_cfg: FinetuneConfig | None = None,
                        tent_steps: int = 1, tent_lr: float = 5.0) -> tuple[ModelParams, RunReport]:
    """Drive a baseline across the stream with the engine's reporting shape.

    ``method``: ``source-only`` (frozen), ``stats-adapt`` (per-batch
    re-standardized predictions, no learning), ``tent`` (entropy
    minimization, ``tent_steps`` per batch), or a selector kind from
    ``SELECTOR_KINDS`` (labels an even share of ``total_budget`` per batch
    through the oracle and fine-tunes on everything labeled so far).
    """
    cfg = finetune_cfg or FinetuneConfig()
    rng = Rng(seed).split("baseline", method)
    theta = phi.copy()
    labeled_x: list[np.ndarray] = []
    labeled_y: list[np.ndarray] = []
    is_selector = method in SELECTOR_KINDS
    if is_selector:
        schedule = even_budget_schedule(total_budget, len(batches))
    report = RunReport(method=method, seed=seed, config_hash="-")
    used = 0
    for t, batch in enumerate(batches, start=1):
        x = np.asarray(batch.features, dtype=np.float64)
        if method == "stats-adapt":
            preds = stats_recalibrate(theta, x)
        else:
            preds = models.predict(theta, x)
        inner_steps = 0
        n_new = 0
        if method == "tent":
            theta = entropy_min_adapt(theta, x, tent_steps, tent_lr)
            inner_steps = tent_steps
        elif is_selector:
            k_t = min(schedule[t - 1], len(x))
            if k_t > 0:
                idx = select_samples(method, x, theta, k_t, rng.split("select", t))
                labels = oracle(batch.ids[idx])
                labeled_x.append(x[idx])
                labeled_y.append(np.asarray(labels, dtype=np.int64))
                used += len(idx)
                n_new = len(idx)
            if labeled_y:
                pool = (np.concatenate(labeled_x), np.concatenate(labeled_y))
                theta, info = balanced_finetune(theta, None, pool, 0.0, cfg, rng.split("ft", t))
                inner_steps = info.inner_steps
        record = StepRecord(
            t=t, batch_size=len(x), n_low_added=0, n_low_total=0,
            n_high=0, n_new_anchors=n_new, budget_used=used, nc=0,
            lambda0=0.0, w0=0.0, inner_steps=inner_steps,
        )
        if realtime_eval is not None:
            record.realtime_accuracy = realtime_eval(batch.ids, preds)
        report.steps.append(record)
    report.realized_budget = used
    return theta, report


def pooled_active_adapt(kind: str, phi: ModelParams, pool: np.ndarray,
                        pool_ids: np.ndarray, budget: int,
                        oracle: Callable[[np.ndarray], np.ndarray], seed: int,
                        finetune_cfg: FinetuneConfig | None = None) -> tuple[ModelParams, np.ndarray]:
    """One-shot selection over the whole pre-collected target pool, then
    fine-tune the source model on the labeled picks (the pooled protocol)."""
    cfg = finetune_cfg or FinetuneConfig()
    rng = Rng(seed).split("ada", kind)
    idx = select_samples(kind, pool, phi, budget, rng.split("select"))
    if idx.size == 0:
        return phi.copy(), idx
    labels = np.asarray(oracle(np.asarray(pool_ids)[idx]), dtype=np.int64)
    theta, _ = balanced_finetune(phi, None, (np.asarray(pool)[idx], labels), 0.0,
                                 cfg, rng.split("ft"))
    return theta, idx
