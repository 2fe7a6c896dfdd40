"""The streaming adaptation engine.

Per incoming batch the engine: (1) records pre-adaptation predictions —
real-time accuracy is always measured with the *previous* model, the way a
deployed system would experience it; (2) entropy-gates the batch, growing
the pseudo-labeled set from the frozen pretrained model and the labeling
candidates from the current one; (3) runs incremental clustering over the
candidates under the remaining label budget; (4) chooses the source-term
weight from the pseudo/labeled mix; (5) fine-tunes on paired mini-batches
from both sets with tolerance-count early stopping; (6) grows the cluster
count for the next step.

Engine state serializes to JSON in full — resuming from a checkpoint and
replaying the remaining batches reproduces the uninterrupted run bit for
bit, because every step draws from its own (seed, step)-keyed stream.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import models, theory
from .clustering import AnchorSet, ic_step
from .gating import ConfigError, GateThresholds, PseudoLabeledSet, accumulate_low, gate_batch
from .models import ModelParams
from .rng import Rng
from .streams import Batch


class InvariantError(RuntimeError):
    """A guaranteed run property was violated (CLI maps this to exit code 3)."""


W_MODES = ("match-lambda", "fixed", "closed-form")


@dataclass(frozen=True)
class FinetuneConfig:
    """Inner-loop knobs shared by the engine and every fine-tuning baseline."""

    lr: float = 0.1
    pair_batch: int = 32
    max_inner_steps: int = 150
    tol_patience: int = 5
    min_delta: float = 0.0

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.pair_batch < 1 or self.max_inner_steps < 1:
            raise ConfigError("lr, pair_batch, max_inner_steps must be positive")
        if self.tol_patience < 1 or self.min_delta < 0:
            raise ConfigError("tol_patience must be >= 1 and min_delta >= 0")


@dataclass(frozen=True)
class EngineConfig:
    """Full engine configuration; every field has a sane default."""

    e_low: float = 1e-3
    e_high: float = 1e-2
    budget: int = 300
    nc_init: int = 3
    nc_increase: int = 2
    w_mode: str = "match-lambda"
    w_fixed: float | None = None
    shift_estimate: float | None = None    # A for closed-form mode
    c1: float = 1.0
    capacity: float | None = None          # d for closed-form; default: param count
    low_cap: int | None = None             # reservoir cap on the pseudo-labeled set
    lr: float = 0.1
    pair_batch: int = 32
    max_inner_steps: int = 150
    tol_patience: int = 5
    min_delta: float = 0.0

    def __post_init__(self) -> None:
        GateThresholds(self.e_low, self.e_high)  # validates ordering/signs
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if self.nc_init < 1 or self.nc_increase < 0:
            raise ConfigError("nc_init >= 1 and nc_increase >= 0 required")
        if self.w_mode not in W_MODES:
            raise ConfigError(f"w_mode must be one of {W_MODES}")
        if self.w_mode == "fixed":
            if self.w_fixed is None or not 0.0 <= self.w_fixed <= 1.0:
                raise ConfigError("fixed w_mode needs w_fixed in [0, 1]")
        if self.low_cap is not None and self.low_cap < 0:
            raise ConfigError("low_cap must be >= 0")
        self.finetune()  # validates the shared inner-loop fields

    def thresholds(self) -> GateThresholds:
        return GateThresholds(self.e_low, self.e_high)

    def finetune(self) -> FinetuneConfig:
        return FinetuneConfig(self.lr, self.pair_batch, self.max_inner_steps,
                              self.tol_patience, self.min_delta)

    def to_jsonable(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_jsonable(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class WeightPlan:
    """Resolved loss weights for one fine-tuning round."""

    lambda0: float   # pseudo-labeled fraction of the pool
    w0: float        # weight on the pseudo-labeled loss term
    mode: str


def compute_weight_plan(n_low: int, n_high: int, cfg: EngineConfig,
                        capacity: float | None = None) -> WeightPlan:
    """λ(t) = |pseudo| / (|pseudo| + |labeled|), then w0 per configured mode.

    Matching w0 to λ0 is the default (it minimizes the radical term of the
    error bounds exactly); ``fixed`` pins w0; ``closed-form`` evaluates the
    bound-optimal weight given a shift estimate A and clamps it into
    [0, λ0] (never *more* source emphasis than the data mix itself).
    """
    total = n_low + n_high
    lambda0 = n_low / total if total else 0.0
    if cfg.w_mode == "fixed":
        return WeightPlan(lambda0, float(cfg.w_fixed), "fixed")
    if cfg.w_mode == "closed-form" and cfg.shift_estimate is not None and total:
        d = cfg.capacity if cfg.capacity is not None else capacity
        if d is None or d <= 0:
            raise ConfigError("closed-form w_mode needs a positive capacity")
        w0 = theory.optimal_w0(lambda0, cfg.shift_estimate, total, d, cfg.c1)
        return WeightPlan(lambda0, min(max(w0, 0.0), lambda0), "closed-form")
    return WeightPlan(lambda0, lambda0, "match-lambda")


@dataclass
class FinetuneInfo:
    inner_steps: int = 0
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    best_loss: float = float("nan")
    stopped: str = "empty"   # "patience" | "max-steps" | "empty"


LabeledSet = tuple[np.ndarray, np.ndarray]


def _cycled_batches(n: int, batch: int, gen: np.random.Generator):
    """Endless shuffled index batches; reshuffles whenever exhausted."""
    while True:
        perm = gen.permutation(n)
        for start in range(0, n, batch):
            yield perm[start:start + batch]


def balanced_finetune(theta: ModelParams, low: LabeledSet | None, high: LabeledSet | None,
                      w0: float, cfg: FinetuneConfig, rng: Rng) -> tuple[ModelParams, FinetuneInfo]:
    """Paired-minibatch SGD on the two sets with weights (w0, 1-w0).

    Each inner step draws one mini-batch from each active set (the larger
    set paces an epoch without replacement, the smaller cycles) and applies
    one combined gradient step.  A set that is empty or has zero weight is
    dropped and the remaining weight renormalized to 1.  Training stops
    after ``tol_patience`` consecutive steps without a decrease of the
    combined full-set loss, or at ``max_inner_steps``.
    """
    if not 0.0 <= w0 <= 1.0:
        raise ValueError("w0 must lie in [0, 1]")
    sets: list[tuple[str, LabeledSet, float]] = []
    if low is not None and len(low[1]) > 0 and w0 > 0.0:
        sets.append(("low", low, w0))
    if high is not None and len(high[1]) > 0 and (1.0 - w0) > 0.0:
        sets.append(("high", high, 1.0 - w0))
    if not sets:
        return theta.copy(), FinetuneInfo(stopped="empty")
    if len(sets) == 1:
        name, data, _ = sets[0]
        sets = [(name, data, 1.0)]

    streams = []
    for name, (x, y), weight in sets:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        gen = rng.split(name).generator()
        streams.append({"x": x, "y": y, "w": weight, "n": len(y),
                        "batches": _cycled_batches(len(y), cfg.pair_batch, gen)})

    def combined_loss(params: ModelParams) -> float:
        return sum(s["w"] * models.ce_loss(params, s["x"], s["y"]) for s in streams)

    info = FinetuneInfo()
    info.initial_loss = combined_loss(theta)
    best = info.initial_loss
    bad = 0
    params = theta
    steps = 0
    while steps < cfg.max_inner_steps:
        grads = []
        for s in streams:
            idx = next(s["batches"])
            _, grad = models.ce_loss_grad(params, s["x"][idx], s["y"][idx])
            grads.append((s["w"], grad))
        params = _apply_weighted_step(params, grads, cfg.lr)
        steps += 1
        loss = combined_loss(params)
        if loss < best - cfg.min_delta:
            best = loss
            bad = 0
        else:
            bad += 1
            if bad >= cfg.tol_patience:
                info.stopped = "patience"
                break
    else:
        info.stopped = "max-steps"
    info.inner_steps = steps
    info.final_loss = combined_loss(params)
    info.best_loss = best
    return params, info


def _apply_weighted_step(params: ModelParams, grads: Sequence[tuple[float, ModelParams]],
                         lr: float) -> ModelParams:
    for weight, grad in grads:
        if weight == 0.0:
            continue
        params = models.sgd_step(params, grad, lr * weight)
    return params


# ---------------------------------------------------------------------------
# engine state and the per-step transition


@dataclass
class EngineState:
    theta: ModelParams
    pseudo: PseudoLabeledSet
    anchors: AnchorSet
    nc: int
    t: int = 0

    @property
    def budget_used(self) -> int:
        return len(self.anchors)

    def to_jsonable(self) -> dict:
        return {
            "theta": self.theta.to_jsonable(),
            "pseudo": self.pseudo.to_jsonable(),
            "anchors": self.anchors.to_jsonable(),
            "nc": self.nc,
            "t": self.t,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "EngineState":
        return cls(
            theta=ModelParams.from_jsonable(obj["theta"]),
            pseudo=PseudoLabeledSet.from_jsonable(obj["pseudo"]),
            anchors=AnchorSet.from_jsonable(obj["anchors"]),
            nc=int(obj["nc"]),
            t=int(obj["t"]),
        )


def initial_state(phi: ModelParams, cfg: EngineConfig) -> EngineState:
    return EngineState(theta=phi.copy(), pseudo=PseudoLabeledSet(),
                       anchors=AnchorSet(), nc=cfg.nc_init, t=0)


@dataclass
class StepRecord:
    t: int
    batch_size: int
    n_low_added: int
    n_low_total: int
    n_high: int
    n_new_anchors: int
    budget_used: int
    nc: int
    lambda0: float
    w0: float
    inner_steps: int
    realtime_accuracy: float | None = None
    events: list[str] = field(default_factory=list)

    def to_jsonable(self) -> dict:
        return asdict(self)

    @classmethod
    def from_jsonable(cls, obj: dict) -> "StepRecord":
        return cls(**obj)


def atta_step(state: EngineState, batch: Batch, phi: ModelParams, cfg: EngineConfig,
              oracle: Callable[[np.ndarray], np.ndarray], rng: Rng) -> tuple[EngineState, StepRecord, np.ndarray]:
    """Process one batch; returns (new state, record, pre-adaptation preds)."""
    t = state.t + 1
    step_rng = rng.split("step", t)
    x = np.asarray(batch.features, dtype=np.float64)
    events: list[str] = []

    preds = models.predict(state.theta, x)

    gate = gate_batch(x, phi, state.theta, cfg.thresholds())
    pseudo = accumulate_low(state.pseudo, x[gate.low_idx], gate.low_labels, t,
                            cap=cfg.low_cap, rng=step_rng.split("cap"))
    if cfg.low_cap is not None and len(state.pseudo) + gate.low_idx.size > cfg.low_cap:
        events.append("low-cap-applied")

    anchors = state.anchors
    budget_remaining = cfg.budget - len(anchors)
    if budget_remaining < 0:
        raise InvariantError(f"anchor count {len(anchors)} exceeds budget {cfg.budget}")
    n_new_anchors = 0
    if gate.high_idx.size == 0:
        events.append("no-high")
    elif budget_remaining == 0:
        events.append("budget-exhausted")
    else:
        theta_prev = state.theta  # clustering features come from the pre-update model

        def embed(raw: np.ndarray) -> np.ndarray:
            return models.penultimate(theta_prev, raw)

        anchors, info = ic_step(
            anchors, x[gate.high_idx], state.nc, embed, oracle,
            step_rng.split("ic"), budget_remaining=budget_remaining,
            step=t, new_ids=batch.ids[gate.high_idx],
        )
        n_new_anchors = info.n_new_anchors
        if info.dropped_weight:
            events.append(f"ic-clipped:{info.dropped_weight}")
    if len(anchors) > cfg.budget:
        raise InvariantError(f"anchor count {len(anchors)} exceeds budget {cfg.budget}")

    plan = compute_weight_plan(len(pseudo), len(anchors), cfg,
                               capacity=float(state.theta.param_count()))
    low = (pseudo.features, pseudo.labels) if len(pseudo) else None
    high = (anchors.feature_matrix(), anchors.labels()) if len(anchors) else None
    if low is None and high is None:
        events.append("no-train")
        theta, ft = state.theta.copy(), FinetuneInfo(stopped="empty")
    else:
        theta, ft = balanced_finetune(state.theta, low, high, plan.w0,
                                      cfg.finetune(), step_rng.split("ft"))

    new_state = EngineState(theta=theta, pseudo=pseudo, anchors=anchors,
                            nc=state.nc + cfg.nc_increase, t=t)
    record = StepRecord(
        t=t, batch_size=len(x),
        n_low_added=int(gate.low_idx.size), n_low_total=len(pseudo),
        n_high=int(gate.high_idx.size), n_new_anchors=n_new_anchors,
        budget_used=new_state.budget_used, nc=state.nc,
        lambda0=plan.lambda0, w0=plan.w0, inner_steps=ft.inner_steps,
        events=events,
    )
    return new_state, record, preds


# ---------------------------------------------------------------------------
# full-stream driver with checkpoint/resume


@dataclass
class RunReport:
    method: str
    seed: int
    config_hash: str
    steps: list[StepRecord] = field(default_factory=list)
    segment_accuracy: dict[str, float] = field(default_factory=dict)
    post_accuracy: dict[str, float] = field(default_factory=dict)
    realized_budget: int = 0
    wall_time_s: float = 0.0
    extras: dict = field(default_factory=dict)


def save_checkpoint(state: EngineState, cfg: EngineConfig, seed: int, path: str | Path,
                    records: Sequence[StepRecord] = (), extras: dict | None = None) -> None:
    """Self-contained checkpoint: engine state plus the step records so far.

    A resumed run can therefore emit the *complete* metrics trail, not just
    its own tail, which is what makes resumed outputs byte-identical to an
    uninterrupted run.  ``extras`` is an open slot for harness-side tallies
    (e.g. accumulated real-time accuracy counts).
    """
    payload = {
        "state": state.to_jsonable(),
        "config_hash": cfg.hash(),
        "seed": int(seed),
        "records": [r.to_jsonable() for r in records],
        "extras": extras or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path, cfg: EngineConfig, seed: int) -> tuple[EngineState, list[StepRecord], dict]:
    payload = json.loads(Path(path).read_text())
    if payload["config_hash"] != cfg.hash():
        raise ConfigError("checkpoint was produced under a different configuration")
    if payload["seed"] != seed:
        raise ConfigError("checkpoint was produced under a different seed")
    records = [StepRecord.from_jsonable(r) for r in payload.get("records", [])]
    return EngineState.from_jsonable(payload["state"]), records, payload.get("extras", {})


def run_stream(phi: ModelParams, batches: Sequence[Batch], cfg: EngineConfig, seed: int,
               oracle: Callable[[np.ndarray], np.ndarray],
               realtime_eval: Callable[[np.ndarray, np.ndarray], float] | None = None,
               resume_state: EngineState | None = None,
               resume_records: Sequence[StepRecord] | None = None,
               checkpoint_at: int | None = None,
               checkpoint_path: str | Path | None = None,
               checkpoint_extras: Callable[[], dict] | None = None) -> tuple[EngineState, RunReport]:
    """Drive the engine across a whole stream.

    ``realtime_eval(ids, preds)`` is the harness's hook for measuring
    pre-adaptation accuracy; the engine itself never sees a label outside
    the oracle.  With ``resume_state`` the first ``resume_state.t`` batches
    are skipped and the run continues identically to one that never
    stopped, because per-step randomness is keyed by (seed, step) alone.
    """
    rng = Rng(seed).split("engine")
    state = resume_state if resume_state is not None else initial_state(phi, cfg)
    report = RunReport(method="simatta", seed=seed, config_hash=cfg.hash())
    if resume_records:
        report.steps.extend(resume_records)
    started = time.perf_counter()
    for i, batch in enumerate(batches, start=1):
        if i <= state.t:
            continue
        state, record, preds = atta_step(state, batch, phi, cfg, oracle, rng)
        if realtime_eval is not None:
            record.realtime_accuracy = realtime_eval(batch.ids, preds)
        report.steps.append(record)
        if checkpoint_at is not None and state.t == checkpoint_at and checkpoint_path is not None:
            save_checkpoint(state, cfg, seed, checkpoint_path, records=report.steps,
                            extras=checkpoint_extras() if checkpoint_extras else None)
    report.realized_budget = state.budget_used
    report.wall_time_s = time.perf_counter() - started
    return state, report
