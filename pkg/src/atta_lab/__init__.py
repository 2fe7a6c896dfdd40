"""Streaming active test-time adaptation lab.

The engine adapts a source-pretrained classifier on an unlabeled target
stream by (a) keeping low-entropy samples as pseudo-labeled source
stand-ins, (b) spending a bounded oracle-label budget on cluster-selected
high-entropy samples, and (c) fine-tuning on both sets with a weight tied
to their mix — the setting analyzed by the error bounds in ``theory``.
"""

from .clustering import Anchor, AnchorSet, ic_step, weighted_kmeans
from .engine import (EngineConfig, EngineState, FinetuneConfig, InvariantError,
                     RunReport, StepRecord, atta_step, balanced_finetune,
                     compute_weight_plan, initial_state, load_checkpoint,
                     run_stream, save_checkpoint)
from .gating import ConfigError, GateThresholds, gate_batch
from .models import ModelParams, accuracy, ce_loss, entropy, init_params, predict_proba
from .rng import Rng
from .streams import (Benchmark, Oracle, Stream, gen_benchmark, load_benchmark,
                      make_stream, pretrain_source, save_benchmark)

__version__ = "0.1.0"

__all__ = [
    "Anchor", "AnchorSet", "Benchmark", "ConfigError", "EngineConfig",
    "EngineState", "FinetuneConfig", "GateThresholds", "InvariantError",
    "ModelParams", "Oracle", "Rng", "RunReport", "StepRecord", "Stream",
    "accuracy", "atta_step", "balanced_finetune", "ce_loss",
    "compute_weight_plan", "entropy", "gate_batch", "gen_benchmark",
    "ic_step", "init_params", "initial_state", "load_benchmark",
    "load_checkpoint", "make_stream", "predict_proba", "pretrain_source",
    "run_stream", "save_benchmark", "save_checkpoint", "weighted_kmeans",
]
