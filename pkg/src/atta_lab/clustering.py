"""Weighted k-means and incremental anchor clustering.

The incremental scheme compresses everything labeled so far into *anchors*:
each anchor carries a weight equal to the number of stream samples it has
absorbed, so clustering anchors+new-batch with those weights behaves like
clustering the whole history without storing it.  New clusters (containing
no existing anchor) propose one representative each — the sample nearest
the centroid — and those representatives are the only points that ever get
sent to the labeling oracle.

Weights are `fractions.Fraction`, not floats: a cluster's new samples are
split evenly among its anchors, and conservation (total anchor weight ==
total samples ever clustered) is asserted *exactly* in the tests.  Floats
are only materialized at the k-means call boundary.

The k-means itself is written out here rather than delegated, because the
determinism contract is load-bearing: lowest-index tie-breaking everywhere,
weighted k-means++ seeding (probability proportional to w * D^2), and empty
clusters reseeded at the point with the largest weighted contribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .rng import Rng


@dataclass
class KMeansResult:
    centroids: np.ndarray        # (k, d)
    assignment: np.ndarray       # (n,) int, values in [0, k)
    inertia: float               # sum_i w_i * ||x_i - c_a(i)||^2
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)


def _weighted_choice(gen: np.random.Generator, probs: np.ndarray) -> int:
    """Index draw from an unnormalized probability vector via inverse CDF."""
    cdf = np.cumsum(probs)
    r = gen.uniform(0.0, cdf[-1])
    return int(np.searchsorted(cdf, r, side="right").clip(0, len(probs) - 1))


def _plusplus_seeds(x: np.ndarray, w: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """Weighted k-means++: seed 0 with prob ~ w_i, then prob ~ w_i * D(x_i)^2."""
    n = x.shape[0]
    seeds = np.empty(k, dtype=np.int64)
    seeds[0] = _weighted_choice(gen, w)
    d2 = ((x - x[seeds[0]]) ** 2).sum(axis=1)
    for j in range(1, k):
        probs = w * d2
        if probs.sum() <= 0.0:
            # all remaining mass sits on already-chosen points (duplicates);
            # fall back to weight-proportional choice
            probs = w
        seeds[j] = _weighted_choice(gen, probs)
        d2 = np.minimum(d2, ((x - x[seeds[j]]) ** 2).sum(axis=1))
    return seeds


def weighted_kmeans(x: np.ndarray, weights: Sequence[float], k: int, rng: Rng,
                    max_iter: int = 100, tol: float = 1e-7) -> KMeansResult:
    """Lloyd iterations on weighted points with k-means++ seeding.

    Ties (equidistant centroids, equal reseed contributions) resolve to the
    lowest index, so results are a pure function of (x, weights, k, rng).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("x must be a non-empty 2-D array")
    w = np.asarray(weights, dtype=np.float64)
    n = x.shape[0]
    if w.shape != (n,):
        raise ValueError("weights length mismatch")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")

    gen = rng.generator()
    centroids = x[_plusplus_seeds(x, w, k, gen)].copy()
    assignment = np.zeros(n, dtype=np.int64)
    inertia = np.inf
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        # assign (argmin takes the lowest index on ties)
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignment = np.argmin(d2, axis=1)
        contrib = w * d2[np.arange(n), assignment]
        # reseed empty clusters at the largest remaining contribution
        for j in range(k):
            if not np.any(assignment == j):
                far = int(np.argmax(contrib))
                centroids[j] = x[far]
                assignment[far] = j
                contrib[far] = 0.0
        new_inertia = float(contrib.sum())
        history.append(new_inertia)
        # update
        for j in range(k):
            members = assignment == j
            wm = w[members]
            centroids[j] = (wm[:, None] * x[members]).sum(axis=0) / wm.sum()
        if inertia - new_inertia <= tol * max(1.0, abs(inertia if np.isfinite(inertia) else 0.0)):
            inertia = new_inertia
            break
        inertia = new_inertia
    # final assignment against the updated centroids
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assignment = np.argmin(d2, axis=1)
    inertia = float((w * d2[np.arange(n), assignment]).sum())
    if history and inertia <= history[-1]:
        history.append(inertia)
    return KMeansResult(centroids, assignment, inertia, n_iter, history)


# ---------------------------------------------------------------------------
# incremental clustering over anchors


@dataclass
class Anchor:
    """A labeled representative plus the sample mass it stands for."""

    features: np.ndarray
    label: int
    weight: Fraction
    step_added: int = 0
    source_id: int = -1   # opaque pool row id; -1 when unknown

    def to_jsonable(self) -> dict:
        return {
            "features": np.asarray(self.features, dtype=np.float64).tolist(),
            "label": int(self.label),
            "weight": [self.weight.numerator, self.weight.denominator],
            "step_added": int(self.step_added),
            "source_id": int(self.source_id),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "Anchor":
        num, den = obj["weight"]
        return cls(np.array(obj["features"], dtype=np.float64), int(obj["label"]),
                   Fraction(num, den), int(obj["step_added"]), int(obj["source_id"]))


@dataclass
class AnchorSet:
    anchors: list[Anchor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.anchors)

    def total_weight(self) -> Fraction:
        return sum((a.weight for a in self.anchors), Fraction(0))

    def feature_matrix(self) -> np.ndarray:
        if not self.anchors:
            return np.zeros((0, 0))
        return np.stack([a.features for a in self.anchors])

    def labels(self) -> np.ndarray:
        return np.array([a.label for a in self.anchors], dtype=np.int64)

    def copy(self) -> "AnchorSet":
        return AnchorSet([Anchor(a.features.copy(), a.label, a.weight, a.step_added, a.source_id)
                          for a in self.anchors])

    def to_jsonable(self) -> list[dict]:
        return [a.to_jsonable() for a in self.anchors]

    @classmethod
    def from_jsonable(cls, obj: list[dict]) -> "AnchorSet":
        return cls([Anchor.from_jsonable(a) for a in obj])


@dataclass
class Proposal:
    """Would-be new anchor: local index into the new batch plus its cluster."""

    cluster: int
    local_index: int      # index into x_new
    cluster_size: int     # new samples in that cluster


@dataclass
class ICStepInfo:
    n_candidates: int = 0
    n_proposals: int = 0
    n_new_anchors: int = 0
    dropped_weight: int = 0     # new-sample mass in clusters rejected by the guard
    skipped: bool = False       # budget already exhausted, nothing ran
    k_used: int = 0


def anchor_budget_guard(proposals: Sequence[Proposal],
                        budget_remaining: int | None) -> tuple[list[Proposal], list[Proposal]]:
    """Clip proposals to the remaining label budget.

    Accepts by decreasing cluster size (ties: lower cluster index), so the
    densest unexplained regions get labeled first.  Returns (accepted,
    rejected).  ``None`` means unlimited.
    """
    ordered = sorted(proposals, key=lambda p: (-p.cluster_size, p.cluster))
    if budget_remaining is None:
        return ordered, []
    if budget_remaining < 0:
        raise ValueError("budget_remaining must be >= 0")
    return ordered[:budget_remaining], ordered[budget_remaining:]


def ic_step(anchor_set: AnchorSet, x_new: np.ndarray, nc: int,
            feature_fn: Callable[[np.ndarray], np.ndarray],
            oracle: Callable[[np.ndarray], np.ndarray],
            rng: Rng,
            budget_remaining: int | None = None,
            step: int = 0,
            new_ids: np.ndarray | None = None) -> tuple[AnchorSet, ICStepInfo]:
    """One incremental-clustering round over anchors plus a new batch.

    Clusters ``feature_fn`` embeddings of (anchors ++ x_new) with anchor
    weights vs. unit weights, turns anchor-free clusters into proposals,
    labels the guard-accepted ones through ``oracle``, and redistributes
    each cluster's new-sample count over its anchors as Fraction weight.

    Returns a new AnchorSet (input untouched) and step diagnostics.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim == 1:
        x_new = x_new[:, None]
    n_new = x_new.shape[0]
    info = ICStepInfo(n_candidates=n_new)
    if nc < 1:
        raise ValueError("nc must be >= 1")
    if budget_remaining is not None and budget_remaining <= 0:
        info.skipped = True
        return anchor_set.copy(), info
    if n_new == 0:
        return anchor_set.copy(), info
    if new_ids is None:
        new_ids = np.arange(n_new, dtype=np.int64)

    n_anc = len(anchor_set)
    if n_anc:
        raw = np.concatenate([anchor_set.feature_matrix(), x_new])
    else:
        raw = x_new
    weights = [float(a.weight) for a in anchor_set.anchors] + [1.0] * n_new
    embedded = np.asarray(feature_fn(raw), dtype=np.float64)
    k = min(nc, raw.shape[0])
    info.k_used = k
    km = weighted_kmeans(embedded, weights, k, rng)

    new_part = km.assignment[n_anc:]
    anchor_part = km.assignment[:n_anc]
    new_counts = np.bincount(new_part, minlength=k)

    proposals = []
    for j in range(k):
        if new_counts[j] == 0:
            continue
        if np.any(anchor_part == j):
            continue
        members = np.flatnonzero(new_part == j)
        d2 = ((embedded[n_anc + members] - km.centroids[j]) ** 2).sum(axis=1)
        rep = members[int(np.argmin(d2))]
        proposals.append(Proposal(cluster=j, local_index=int(rep), cluster_size=int(new_counts[j])))
    info.n_proposals = len(proposals)

    accepted, rejected = anchor_budget_guard(proposals, budget_remaining)
    info.n_new_anchors = len(accepted)
    info.dropped_weight = sum(p.cluster_size for p in rejected)

    out = anchor_set.copy()
    # existing anchors absorb their cluster's new samples
    for j in range(k):
        holders = np.flatnonzero(anchor_part == j)
        if holders.size and new_counts[j]:
            gain = Fraction(int(new_counts[j]), int(holders.size))
            for i in holders:
                out.anchors[i].weight += gain
    # accepted representatives become anchors carrying their whole cluster
    accepted_ids = np.array([new_ids[p.local_index] for p in accepted], dtype=np.int64)
    labels = oracle(accepted_ids) if accepted else np.array([], dtype=np.int64)
    for p, lab in zip(accepted, np.asarray(labels, dtype=np.int64)):
        out.anchors.append(Anchor(
            features=x_new[p.local_index].copy(),
            label=int(lab),
            weight=Fraction(p.cluster_size),
            step_added=step,
            source_id=int(new_ids[p.local_index]),
        ))
    return out, info
