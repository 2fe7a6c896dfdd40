"""Numerical evaluation of the learning-theory bounds and their studies.

This module turns the generalization-bound algebra into checkable code:
closed-form evaluators for the single-pair test/source error bounds, the
multi-domain bound, the optimal source-weight formula and its validity
region, a domain-discriminator proxy for the hypothesis-class divergence,
and the two empirical studies (error surfaces over the (λ0, w0) plane and
the low/high-entropy fine-tuning probe).

Conventions used throughout: ``lambda0`` is the fraction of the training
pool drawn from the source-like set, ``w0`` the weight its loss term gets,
``A`` the distribution-shift radius (divergence + estimation slack + joint
error), ``B`` the finite-sample confidence radius.  Ratios ``x^2/λ`` follow
0/0 = 0 and x^2/0 = +inf so boundary cases stay well-defined.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import models
from .models import ModelParams
from .rng import Rng

logger = logging.getLogger(__name__)


def _check_unit(name: str, v: float) -> float:
    v = float(v)
    if not (0.0 <= v <= 1.0) or not math.isfinite(v):
        raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return v


def _ratio(x: float, lam: float) -> float:
    """x^2 / lam with the boundary conventions 0/0 = 0 and x^2/0 = +inf."""
    if lam == 0.0:
        return 0.0 if x == 0.0 else math.inf
    return x * x / lam


def radical_term(w0: float, lambda0: float) -> float:
    """sqrt(w0^2/λ0 + (1-w0)^2/(1-λ0)); equals 1 exactly when w0 == λ0.

    Computed through the algebraically equal form
    sqrt((w0-λ0)^2 / (λ0(1-λ0)) + 1), which keeps the >= 1 floor (equality
    only on the diagonal) true in floating point as well — the two-ratio sum
    can round a hair below 1.
    """
    w0 = _check_unit("w0", w0)
    lambda0 = _check_unit("lambda0", lambda0)
    return math.sqrt(_ratio(w0 - lambda0, lambda0 * (1.0 - lambda0)) + 1.0)


def eval_test_error_bound(w0: float, lambda0: float, a: float, b: float) -> float:
    """Test-domain excess-error bound: w0*A + radical(w0, λ0)*B."""
    if a < 0 or b < 0:
        raise ValueError("A and B must be non-negative")
    r = radical_term(w0, lambda0)
    if math.isinf(r):
        return math.inf if b > 0 else w0 * a
    return w0 * a + r * b


def eval_source_error_bound(w0: float, lambda0: float, a: float, b: float) -> float:
    """Source-domain excess-error bound: (1-w0)*A + radical(w0, λ0)*B."""
    if a < 0 or b < 0:
        raise ValueError("A and B must be non-negative")
    r = radical_term(w0, lambda0)
    if math.isinf(r):
        return math.inf if b > 0 else (1.0 - w0) * a
    return (1.0 - w0) * a + r * b


def confidence_radius(n: int, d: float, delta: float = 0.05) -> float:
    """Exact B term: 2*sqrt((d*ln(2N) - ln(delta)) / (2N))."""
    if n < 1 or d <= 0 or not 0 < delta < 1:
        raise ValueError("need N >= 1, d > 0, 0 < delta < 1")
    return 2.0 * math.sqrt((d * math.log(2 * n) - math.log(delta)) / (2 * n))


def approx_radius(n: int, d: float, c1: float = 1.0) -> float:
    """Approximate B term c1*sqrt(d/N) used by the closed-form weight."""
    if n < 1 or d <= 0 or c1 <= 0:
        raise ValueError("need N >= 1, d > 0, c1 > 0")
    return c1 * math.sqrt(d / n)


def optimal_w0_for_radius(lambda0: float, a: float, b: float) -> float:
    """Minimizer of ``eval_test_error_bound(w0, λ0, A, B)`` over w0 in [0, 1].

    Setting the derivative to zero gives
    ``w0* = λ0 − λ0(1−λ0)·A / sqrt(B² − A²·λ0(1−λ0))``,
    valid exactly when ``B² ≥ A²(1−λ0)``; below that (ample labeled test
    data relative to the shift) the constrained optimum is w0* = 0.
    """
    lambda0 = _check_unit("lambda0", lambda0)
    if a < 0 or b < 0:
        raise ValueError("A and B must be non-negative")
    if a == 0.0:
        return lambda0
    lam_var = lambda0 * (1.0 - lambda0)
    if b * b < a * a * (1.0 - lambda0):
        logger.debug("optimal w0 validity violated (B^2=%g < A^2(1-l0)=%g); using w0=0",
                     b * b, a * a * (1.0 - lambda0))
        return 0.0
    if lam_var == 0.0:
        return lambda0
    w0 = lambda0 - lam_var * a / math.sqrt(b * b - a * a * lam_var)
    return min(max(w0, 0.0), 1.0)


def optimal_w0(lambda0: float, a: float, n: int, d: float, c1: float = 1.0) -> float:
    """Closed-form optimal source weight with B = c1*sqrt(d/N).

    Equivalent form: ``λ0 − λ0(1−λ0)·sqrt(A²N / (c1²d − A²N·λ0(1−λ0)))``,
    valid for ``λ0 ≥ 1 − c1²d/(A²N)``; outside the validity region the
    budget-rich sentinel value 0.0 is returned.
    """
    return optimal_w0_for_radius(lambda0, a, approx_radius(n, d, c1))


@dataclass(frozen=True)
class Thm2Report:
    """Per-λ0 margins of the adapted bound below the no-adaptation limit A+B."""

    lambdas: tuple[float, ...]
    bounds: tuple[float, ...]
    limit: float
    margins: tuple[float, ...]
    all_strict: bool


def check_thm2(a: float, b: float | Callable[[float], float],
               lambda_grid: Sequence[float]) -> Thm2Report:
    """Check min-in-w0 test bound (at w0=λ0) stays strictly below A+B.

    At the minimizing diagonal the bound is λ0*A + B, and the no-adaptation
    limit (w0 = λ0 = 1) is A + B, so the margin is (1-λ0)*A — strict for
    A > 0, λ0 < 1.  ``b`` may be a constant or a function of λ0.
    """
    if a < 0:
        raise ValueError("A must be non-negative")
    lambdas = tuple(float(l) for l in lambda_grid)
    bounds = []
    margins = []
    for lam in lambdas:
        b_val = b(lam) if callable(b) else float(b)
        bound = eval_test_error_bound(lam, lam, a, b_val)
        limit = a + b_val
        bounds.append(bound)
        margins.append(limit - bound)
    const_b = float(b) if not callable(b) else float("nan")
    return Thm2Report(
        lambdas=lambdas,
        bounds=tuple(bounds),
        limit=a + const_b if not callable(b) else math.nan,
        margins=tuple(margins),
        all_strict=all(m > 0 for m in margins),
    )


# ---------------------------------------------------------------------------
# multi-domain bound


@dataclass(frozen=True)
class DomainBoundInputs:
    """Ingredients of the multi-domain excess-error bound.

    Per-domain vectors are index-aligned: ``w`` (loss weights, sum 1),
    ``lam`` (data fractions, sum 1), ``gamma`` (ideal joint errors against
    the target domain), ``eps_star`` (best achievable error per domain,
    defaults to 0).  ``dists[i][j]`` is the estimated divergence between
    domains i and j; ``m`` is the per-domain sample count behind those
    estimates and ``n`` the total training count.
    """

    w: tuple[float, ...]
    lam: tuple[float, ...]
    dists: tuple[tuple[float, ...], ...]
    gamma: tuple[float, ...]
    d: float
    n: int
    m: int
    delta: float = 0.05
    eps_star: tuple[float, ...] | None = None


def eval_thm1_domain_bound(inputs: DomainBoundInputs, j: int) -> float:
    """Evaluate the bound on domain ``j``'s error for a weighted-ERM model."""
    w = np.asarray(inputs.w, dtype=np.float64)
    lam = np.asarray(inputs.lam, dtype=np.float64)
    k = len(w)
    if not (len(lam) == k and len(inputs.gamma) == k and len(inputs.dists) == k):
        raise ValueError("inputs are not index-aligned")
    if not 0 <= j < k:
        raise ValueError("domain index out of range")
    if abs(w.sum() - 1.0) > 1e-9 or abs(lam.sum() - 1.0) > 1e-9:
        raise ValueError("w and lam must each sum to 1")
    if np.any(w < 0) or np.any(lam < 0):
        raise ValueError("w and lam must be non-negative")
    if np.any((lam == 0) & (w > 0)):
        raise ValueError("domain with zero data fraction cannot carry positive weight")
    if inputs.n < 1 or inputs.m < 1 or inputs.d <= 0 or not 0 < inputs.delta < 1:
        raise ValueError("bad capacity/sample/confidence inputs")

    conf_m = 2.0 * math.sqrt((2 * inputs.d * math.log(2 * inputs.m)
                              + math.log(2.0 / inputs.delta)) / inputs.m)
    cross = 0.0
    for i in range(k):
        if i == j or w[i] == 0.0:
            continue
        cross += w[i] * (0.5 * inputs.dists[j][i] + conf_m + inputs.gamma[i])
    active = w > 0
    c_term = math.sqrt(float(np.sum(w[active] ** 2 / lam[active]))
                       * (inputs.d * math.log(2 * inputs.n) - math.log(inputs.delta))
                       / (2 * inputs.n))
    eps = 0.0 if inputs.eps_star is None else float(inputs.eps_star[j])
    return eps + 2.0 * cross + 2.0 * c_term


def empirical_weighted_error(params: ModelParams,
                             datasets: Sequence[tuple[np.ndarray, np.ndarray]],
                             w: Sequence[float]) -> float:
    """Convex combination of per-dataset 0/1 errors, weights summing to 1."""
    w_arr = np.asarray(w, dtype=np.float64)
    if len(datasets) != len(w_arr):
        raise ValueError("dataset/weight length mismatch")
    if np.any(w_arr < 0) or abs(w_arr.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")
    total = 0.0
    for (x, y), wi in zip(datasets, w_arr):
        if wi == 0.0:
            continue
        total += wi * (1.0 - models.accuracy(params, x, y))
    return float(total)


# ---------------------------------------------------------------------------
# divergence proxy and joint-error estimate


def _train_discriminator(x: np.ndarray, y: np.ndarray, rng: Rng,
                         epochs: int, lr: float, batch: int) -> ModelParams:
    params = models.init_params(x.shape[1], 2, rng.split("init"))
    gen = rng.split("order").generator()
    n = x.shape[0]
    for _ in range(epochs):
        perm = gen.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            _, grad = models.ce_loss_grad(params, x[idx], y[idx])
            params = models.sgd_step(params, grad, lr)
    return params


def proxy_h_delta_h(x1: np.ndarray, x2: np.ndarray, rng: Rng,
                    epochs: int = 40, lr: float = 0.5, batch: int = 64) -> float:
    """Domain-discriminator proxy for the class divergence, clamped to [0, 2].

    Trains the package's classifier family to tell the two samples apart on
    a random half of each and returns ``2 * (1 - 2 * err)`` for the held-out
    error ``err``: indistinguishable distributions give ~0, separable ~2.
    Symmetric in its arguments up to estimation noise.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.ndim != 2 or x2.ndim != 2 or x1.shape[1] != x2.shape[1]:
        raise ValueError("need two 2-D sets with equal feature dim")
    if min(x1.shape[0], x2.shape[0]) < 20:
        raise ValueError("need at least 20 samples per set")
    gen = rng.split("halves").generator()
    halves = []
    for xs in (x1, x2):
        perm = gen.permutation(xs.shape[0])
        cut = xs.shape[0] // 2
        halves.append((xs[perm[:cut]], xs[perm[cut:]]))
    x_tr = np.concatenate([halves[0][0], halves[1][0]])
    y_tr = np.concatenate([np.zeros(len(halves[0][0]), dtype=np.int64),
                           np.ones(len(halves[1][0]), dtype=np.int64)])
    x_te = np.concatenate([halves[0][1], halves[1][1]])
    y_te = np.concatenate([np.zeros(len(halves[0][1]), dtype=np.int64),
                           np.ones(len(halves[1][1]), dtype=np.int64)])
    disc = _train_discriminator(x_tr, y_tr, rng.split("train"), epochs, lr, batch)
    err = 1.0 - models.accuracy(disc, x_te, y_te)
    return float(min(max(2.0 * (1.0 - 2.0 * err), 0.0), 2.0))


def estimate_gamma(x1: np.ndarray, y1: np.ndarray, x2: np.ndarray, y2: np.ndarray,
                   rng: Rng, epochs: int = 40, lr: float = 0.5, batch: int = 64) -> float:
    """Plug-in estimate of the ideal joint error: one classifier fit on the
    union of both labeled sets, returning the sum of its two in-sample errors."""
    x = np.concatenate([np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)])
    y = np.concatenate([np.asarray(y1, dtype=np.int64), np.asarray(y2, dtype=np.int64)])
    n_classes = int(y.max()) + 1
    params = models.init_params(x.shape[1], max(n_classes, 2), rng.split("init"))
    gen = rng.split("order").generator()
    for _ in range(epochs):
        perm = gen.permutation(len(y))
        for start in range(0, len(y), batch):
            idx = perm[start:start + batch]
            _, grad = models.ce_loss_grad(params, x[idx], y[idx])
            params = models.sgd_step(params, grad, lr)
    err1 = 1.0 - models.accuracy(params, x1, y1)
    err2 = 1.0 - models.accuracy(params, x2, y2)
    return float(err1 + err2)


# ---------------------------------------------------------------------------
# empirical studies (error surfaces, entropy probe)


@dataclass(frozen=True)
class SurfaceCell:
    lambda0: float
    w0: float
    seed: int
    test_loss: float
    source_loss: float

    @property
    def combined_loss(self) -> float:
        return self.test_loss + self.source_loss


def surface_cell_seed(master_seed: int, cell_index: int) -> int:
    """Fixed per-cell seed arithmetic: master ⊕ cell index (row-major)."""
    return (int(master_seed) ^ int(cell_index)) & (2**64 - 1)


def evaluate_surface_cell(benchmark, phi: ModelParams, lambda0: float, w0: float,
                          seed: int, n_train: int, finetune_cfg=None) -> SurfaceCell:
    """Fine-tune φ on an (λ0-source, rest-target) mix with source weight w0,
    then report mean CE on the source and pooled-target test splits."""
    from .engine import FinetuneConfig, balanced_finetune

    cfg = finetune_cfg or FinetuneConfig()
    rng = Rng(seed)
    gen = rng.split("sample").generator()
    n_src = int(round(lambda0 * n_train))
    n_tgt = n_train - n_src
    src_x, src_y = benchmark.source_train()
    pool_x, pool_y, _ = benchmark.target_pool()
    if n_src > len(src_y) or n_tgt > len(pool_y):
        raise ValueError("n_train too large for the benchmark splits")
    low = None
    if n_src:
        pick = np.sort(gen.choice(len(src_y), size=n_src, replace=False))
        low = (src_x[pick], src_y[pick])
    high = None
    if n_tgt:
        pick = np.sort(gen.choice(len(pool_y), size=n_tgt, replace=False))
        high = (pool_x[pick], pool_y[pick])
    theta, _ = balanced_finetune(phi, low, high, w0, cfg, rng.split("ft"))
    tst_x, tst_y = benchmark.target_test_pool()
    s_x, s_y = benchmark.domain_test(0)
    return SurfaceCell(
        lambda0=float(lambda0), w0=float(w0), seed=int(seed),
        test_loss=models.ce_loss(theta, tst_x, tst_y),
        source_loss=models.ce_loss(theta, s_x, s_y),
    )


def error_surface_sweep(benchmark, phi: ModelParams, lambda_grid: Sequence[float],
                        w_grid: Sequence[float], n_seeds: int, master_seed: int,
                        n_train: int = 500, finetune_cfg=None,
                        workers: int = 1) -> list[SurfaceCell]:
    """Grid sweep over (λ0, w0, seed); rows come back sorted by cell index.

    Cells are independent, seeded by ``master_seed ^ cell_index``, so the
    result is byte-identical regardless of worker count.
    """
    tasks = []
    idx = 0
    for lam in lambda_grid:
        for w0 in w_grid:
            for _ in range(n_seeds):
                tasks.append((float(lam), float(w0), surface_cell_seed(master_seed, idx)))
                idx += 1
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial
        fn = partial(_surface_task, benchmark=benchmark, phi=phi,
                     n_train=n_train, finetune_cfg=finetune_cfg)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        cells = [evaluate_surface_cell(benchmark, phi, lam, w0, s, n_train, finetune_cfg)
                 for lam, w0, s in tasks]
    return cells


def _surface_task(task: tuple[float, float, int], benchmark, phi, n_train, finetune_cfg) -> SurfaceCell:
    lam, w0, seed = task
    return evaluate_surface_cell(benchmark, phi, lam, w0, seed, n_train, finetune_cfg)


@dataclass
class ProbeResult:
    """Source/target CE after fine-tuning on one entropy-ranked selection."""

    selection: str   # "low" | "high"
    seed: int
    source_loss: float
    target_loss: float


def entropy_probe(benchmark, phi: ModelParams, n_low: int, n_high: int,
                  seeds: Sequence[int], finetune_cfg=None,
                  use_true_labels: bool = True) -> list[ProbeResult]:
    """Fine-tune φ on the n lowest- vs n highest-entropy pool samples.

    Selections are ranked by frozen-model prediction entropy over the pooled
    target training samples (ties: lower pool index).  Each seed re-runs the
    fine-tuning only; the selections themselves are deterministic.
    """
    from .engine import FinetuneConfig, balanced_finetune

    cfg = finetune_cfg or FinetuneConfig()
    pool_x, pool_y, _ = benchmark.target_pool()
    # the two selections are independent rankings and may overlap; each must
    # merely fit in the pool on its own
    if min(n_low, n_high) < 0 or max(n_low, n_high) > len(pool_y):
        raise ValueError("selection size exceeds the pool")
    h = models.entropy(models.predict_proba(phi, pool_x))
    order = np.argsort(h, kind="stable")
    picks = {"low": order[:n_low], "high": order[len(order) - n_high:]}
    s_x, s_y = benchmark.domain_test(0)
    t_x, t_y = benchmark.target_test_pool()
    results: list[ProbeResult] = []
    for seed in seeds:
        for name, idx in picks.items():
            labels = pool_y[idx] if use_true_labels else models.predict(phi, pool_x[idx])
            # both selections share one stream (common random numbers), so the
            # low-vs-high comparison is paired and identical selections give
            # bit-identical reports
            theta, _ = balanced_finetune(phi, None, (pool_x[idx], labels), 0.0,
                                         cfg, Rng(int(seed)).split("probe"))
            results.append(ProbeResult(
                selection=name, seed=int(seed),
                source_loss=models.ce_loss(theta, s_x, s_y),
                target_loss=models.ce_loss(theta, t_x, t_y),
            ))
    return results
