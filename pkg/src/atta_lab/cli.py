"""Command-line harness.

Subcommands::

    gen-data   generate a synthetic shifted-domain dataset to a directory
    pretrain   fit the source model and save its parameters
    run        drive one method over the target stream (or pooled setting)
    sweep      (λ0, w0) error-surface grid on frozen source/target subsets
    probe      low- vs high-entropy fine-tuning comparison
    bounds     evaluate the error-bound algebra for given constants
    report     side-by-side table from finished run directories

Exit codes: 0 success, 2 configuration/usage error, 3 internal invariant
violation.  ``ATTA_LAB_THREADS`` sets the default worker count for
``sweep`` (explicit ``--workers`` wins; results never depend on it).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines, models, reporting, theory
from .engine import (EngineConfig, FinetuneConfig, InvariantError, RunReport,
                     load_checkpoint, run_stream)
from .gating import ConfigError
from .models import ModelParams
from .rng import Rng
from .streams import (Benchmark, Oracle, dataset_checksum, gen_benchmark,
                      load_benchmark, make_stream, pretrain_source,
                      save_benchmark)

METHODS = ("simatta", "tent", "source-only", "stats-adapt") + baselines.SELECTOR_KINDS

_ENGINE_KEYS = (
    "e_low", "e_high", "budget", "nc_init", "nc_increase", "w_mode", "w_fixed",
    "shift_estimate", "c1", "capacity", "low_cap", "lr", "pair_batch",
    "max_inner_steps", "tol_patience", "min_delta",
)


def save_model(params: ModelParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params.to_jsonable(), sort_keys=True) + "\n")


def load_model(path: str | Path) -> ModelParams:
    return ModelParams.from_jsonable(json.loads(Path(path).read_text()))


def _get_benchmark(args) -> Benchmark:
    if getattr(args, "data", None):
        return load_benchmark(args.data)
    return gen_benchmark(getattr(args, "spec", None), seed=getattr(args, "data_seed", None))


def _get_phi(args, benchmark: Benchmark) -> ModelParams:
    if getattr(args, "model", None):
        return load_model(args.model)
    # keyed by the benchmark seed so every method at a given dataset shares φ
    return pretrain_source(benchmark)


def _engine_config(args) -> EngineConfig:
    """CLI flags > config-file keys > dataclass defaults."""
    merged: dict = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(_ENGINE_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in _ENGINE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    try:
        return EngineConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _finetune_config(cfg: EngineConfig) -> FinetuneConfig:
    return cfg.finetune()


# ---------------------------------------------------------------------------
# subcommand bodies


def cmd_gen_data(args) -> int:
    benchmark = gen_benchmark(args.spec, seed=args.data_seed)
    out = save_benchmark(benchmark, args.out)
    print(f"wrote {out}")
    print(f"rows {len(benchmark.y)}  dims {benchmark.dims}  classes {benchmark.n_classes}")
    print(f"checksum {dataset_checksum(benchmark)}")
    return 0


def cmd_pretrain(args) -> int:
    benchmark = _get_benchmark(args)
    phi = pretrain_source(benchmark, seed=args.seed, epochs=args.epochs,
                          lr=args.lr, hidden=args.hidden)
    save_model(phi, args.out)
    for name, (x, y) in benchmark.eval_sets().items():
        print(f"{name:>12}  acc {models.accuracy(phi, x, y):.4f}")
    print(f"saved {args.out}")
    return 0


def _post_accuracy(method: str, theta: ModelParams,
                   eval_sets: dict[str, tuple[np.ndarray, np.ndarray]]) -> dict[str, float]:
    out: dict[str, float] = {}
    for name, (x, y) in eval_sets.items():
        if method == "stats-adapt":
            out[name] = float(np.mean(baselines.stats_recalibrate(theta, x) == y))
        else:
            out[name] = models.accuracy(theta, x, y)
    return out


def cmd_run(args) -> int:
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}; choose from {METHODS}")
    benchmark = _get_benchmark(args)
    phi = _get_phi(args, benchmark)
    cfg = _engine_config(args)
    if args.setting == "ada":
        return _run_pooled(args, benchmark, phi, cfg)

    stream = make_stream(benchmark, args.stream, Rng(args.seed))
    oracle = Oracle(benchmark)

    tallies: dict[int, list[int]] = {}

    def realtime_eval(ids: np.ndarray, preds: np.ndarray) -> float:
        truth = benchmark.y[ids]
        for row, pred, true in zip(ids, preds, truth):
            tally = tallies.setdefault(stream.segment_of[int(row)], [0, 0])
            tally[0] += int(pred == true)
            tally[1] += 1
        return float(np.mean(preds == truth))

    budget_offset = 0
    if args.method == "simatta":
        resume_state = None
        resume_records = None
        if args.resume:
            resume_state, resume_records, extras = load_checkpoint(args.resume, cfg, args.seed)
            for key, (hit, seen) in extras.get("tallies", {}).items():
                tallies[int(key)] = [int(hit), int(seen)]
            budget_offset = resume_state.budget_used
        state, report = run_stream(
            phi, stream.batches, cfg, args.seed, oracle,
            realtime_eval=realtime_eval,
            resume_state=resume_state, resume_records=resume_records,
            checkpoint_at=args.checkpoint_at, checkpoint_path=args.checkpoint,
            checkpoint_extras=lambda: {"tallies": {str(k): list(v) for k, v in tallies.items()}},
        )
        theta = state.theta
    else:
        theta, report = baselines.run_stream_baseline(
            args.method, phi, stream.batches, oracle, args.seed,
            realtime_eval=realtime_eval, total_budget=cfg.budget,
            finetune_cfg=_finetune_config(cfg),
            tent_steps=args.tent_steps, tent_lr=args.tent_lr,
        )
        if args.method == "tent":
            report.extras["tent_steps"] = args.tent_steps

    if oracle.query_count != report.realized_budget - budget_offset:
        raise InvariantError(
            f"oracle answered {oracle.query_count} queries but the report "
            f"claims {report.realized_budget - budget_offset} labels")

    for seg_idx, name in enumerate(stream.segment_names):
        if seg_idx in tallies:
            hit, seen = tallies[seg_idx]
            report.segment_accuracy[name] = hit / seen
    report.post_accuracy = _post_accuracy(args.method, theta, benchmark.eval_sets())

    resolved = {
        "method": args.method, "setting": "stream", "stream": args.stream,
        "seed": args.seed, "dataset_seed": benchmark.seed,
        "dataset_checksum": dataset_checksum(benchmark),
        "engine": cfg.to_jsonable(), "tent_steps": args.tent_steps,
    }
    if args.out:
        reporting.write_run_dir(args.out, report, resolved)
    if args.model_out:
        save_model(theta, args.model_out)
    print(reporting.render_comparison({args.method: report}))
    if args.out:
        print(f"run artifacts in {args.out}")
    return 0


def _run_pooled(args, benchmark: Benchmark, phi: ModelParams, cfg: EngineConfig) -> int:
    """One-shot selection over the pooled target set (the offline protocol)."""
    if args.method not in baselines.SELECTOR_KINDS:
        raise ConfigError(
            f"--setting ada needs a pool selector {baselines.SELECTOR_KINDS}; "
            f"{args.method!r} is stream-only")
    pool_x, _, pool_ids = benchmark.target_pool()
    oracle = Oracle(benchmark)
    theta, picked = baselines.pooled_active_adapt(
        args.method, phi, pool_x, pool_ids, cfg.budget, oracle, args.seed,
        finetune_cfg=_finetune_config(cfg))
    report = RunReport(method=args.method, seed=args.seed, config_hash=cfg.hash())
    report.realized_budget = int(picked.size)
    report.extras["setting"] = "ada"
    report.post_accuracy = _post_accuracy(args.method, theta, benchmark.eval_sets())
    resolved = {
        "method": args.method, "setting": "ada", "seed": args.seed,
        "dataset_seed": benchmark.seed,
        "dataset_checksum": dataset_checksum(benchmark),
        "engine": cfg.to_jsonable(),
    }
    if args.out:
        reporting.write_run_dir(args.out, report, resolved)
    if args.model_out:
        save_model(theta, args.model_out)
    print(reporting.render_comparison({args.method: report}))
    return 0


def cmd_sweep(args) -> int:
    benchmark = _get_benchmark(args)
    phi = _get_phi(args, benchmark)
    workers = args.workers
    if workers is None:
        env = os.environ.get("ATTA_LAB_THREADS", "").strip()
        workers = int(env) if env else (os.cpu_count() or 1)
    if workers < 1:
        raise ConfigError("worker count must be >= 1")
    cells = theory.error_surface_sweep(
        benchmark, phi, args.lambda_grid, args.w_grid, args.seeds,
        args.master_seed, n_train=args.n_train, workers=workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["lambda0,w0,seed,test_loss,source_loss,combined_loss"]
    for c in cells:
        lines.append(f"{c.lambda0!r},{c.w0!r},{c.seed},{c.test_loss!r},"
                     f"{c.source_loss!r},{c.combined_loss!r}")
    out.write_text("\n".join(lines) + "\n")
    # per-λ0 argmin of the seed-mean test loss
    for lam in args.lambda_grid:
        by_w: dict[float, list[float]] = {}
        for c in cells:
            if c.lambda0 == lam:
                by_w.setdefault(c.w0, []).append(c.test_loss)
        means = {w: sum(v) / len(v) for w, v in by_w.items()}
        best = min(means, key=lambda w: (means[w], w))
        print(f"lambda0={lam:.2f}  best w0={best:.2f}  mean test loss {means[best]:.4f}")
    print(f"wrote {out} ({len(cells)} cells, workers={workers})")
    return 0


def cmd_probe(args) -> int:
    benchmark = _get_benchmark(args)
    phi = _get_phi(args, benchmark)
    results = theory.entropy_probe(benchmark, phi, args.n_low, args.n_high,
                                   seeds=range(args.seeds))
    by_seed: dict[int, dict[str, theory.ProbeResult]] = {}
    for r in results:
        by_seed.setdefault(r.seed, {})[r.selection] = r
    wins_source = wins_target = 0
    for seed, pair in sorted(by_seed.items()):
        low, high = pair["low"], pair["high"]
        s = low.source_loss < high.source_loss
        t = high.target_loss < low.target_loss
        wins_source += s
        wins_target += t
        print(f"seed {seed}: source CE low/high {low.source_loss:.4f}/{high.source_loss:.4f}"
              f"  target CE low/high {low.target_loss:.4f}/{high.target_loss:.4f}"
              f"  [{'S' if s else '-'}{'T' if t else '-'}]")
    n = len(by_seed)
    print(f"low-entropy preserves source better in {wins_source}/{n} seeds; "
          f"high-entropy adapts target better in {wins_target}/{n} seeds")
    if args.out:
        rows = ["selection,seed,source_loss,target_loss"]
        rows += [f"{r.selection},{r.seed},{r.source_loss!r},{r.target_loss!r}" for r in results]
        Path(args.out).write_text("\n".join(rows) + "\n")
    return 0


def cmd_bounds(args) -> int:
    b = (theory.confidence_radius(args.n, args.vc_d, args.delta) if args.exact
         else theory.approx_radius(args.n, args.vc_d, args.c1))
    w_star = theory.optimal_w0_for_radius(args.lambda0, args.shift_a, b)
    print(f"radius B = {b:.6f} ({'exact' if args.exact else 'approx'})")
    print(f"optimal w0 = {w_star:.6f} (lambda0 = {args.lambda0})")
    for name, w0 in (("w0*", w_star), ("w0=lambda0", args.lambda0), ("w0=1", 1.0)):
        eb_t = theory.eval_test_error_bound(w0, args.lambda0, args.shift_a, b)
        eb_s = theory.eval_source_error_bound(w0, args.lambda0, args.shift_a, b)
        print(f"{name:>12}: test bound {eb_t:.6f}  source bound {eb_s:.6f}")
    grid = [i / 20 for i in range(1, 20)]
    rep = theory.check_thm2(args.shift_a, b, grid)
    print(f"adapted bound strictly below no-adaptation limit on λ0 grid: "
          f"{'yes' if rep.all_strict else 'NO'}")
    return 0


def _report_from_summary(path: Path) -> RunReport:
    rows = reporting.load_summary(path)
    rep = RunReport(method=rows.get(("run", "method"), "?"),
                    seed=int(rows.get(("run", "seed"), 0)),
                    config_hash=rows.get(("run", "config_hash"), "-"))
    rep.realized_budget = int(rows.get(("run", "realized_budget"), 0))
    for (section, key), value in rows.items():
        if section == "realtime":
            rep.segment_accuracy[key] = float(value)
        elif section == "post":
            rep.post_accuracy[key] = float(value)
    return rep


def cmd_report(args) -> int:
    reports: dict[str, RunReport] = {}
    for run_dir in args.runs:
        path = Path(run_dir) / "summary.csv"
        if not path.exists():
            raise ConfigError(f"no summary.csv under {run_dir}")
        rep = _report_from_summary(path)
        label = rep.method
        if label in reports:
            label = f"{label}:{Path(run_dir).name}"
        reports[label] = rep
    print(reporting.render_comparison(reports))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_data_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="directory holding dataset.csv + benchmark.json")
    p.add_argument("--spec", help="key=value spec file for on-the-fly generation")
    p.add_argument("--data-seed", type=int, default=None,
                   help="dataset seed when generating on the fly")


def _add_model_opt(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="pretrained source model JSON (default: train in-process)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atta-lab",
                                     description="streaming active test-time adaptation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a benchmark dataset directory")
    p.add_argument("--spec")
    p.add_argument("--data-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="fit the source model")
    _add_data_opts(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--hidden", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="run one method over the target stream")
    _add_data_opts(p)
    _add_model_opt(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--stream", default="domain-wise", choices=("domain-wise", "random"))
    p.add_argument("--setting", default="stream", choices=("stream", "ada"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="run-artifact directory")
    p.add_argument("--model-out", help="save the adapted model here")
    p.add_argument("--config", help="JSON engine-config file")
    p.add_argument("--budget", type=int, default=None, help="label budget")
    p.add_argument("--e-low", dest="e_low", type=float, default=None)
    p.add_argument("--e-high", dest="e_high", type=float, default=None)
    p.add_argument("--nc-init", dest="nc_init", type=int, default=None)
    p.add_argument("--nc-increase", dest="nc_increase", type=int, default=None)
    p.add_argument("--w-mode", dest="w_mode", choices=("match-lambda", "fixed", "closed-form"),
                   default=None)
    p.add_argument("--w-fixed", dest="w_fixed", type=float, default=None)
    p.add_argument("--shift-estimate", dest="shift_estimate", type=float, default=None)
    p.add_argument("--low-cap", dest="low_cap", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="fine-tuning learning rate")
    p.add_argument("--max-inner-steps", dest="max_inner_steps", type=int, default=None)
    p.add_argument("--tent-steps", type=int, default=1)
    p.add_argument("--tent-lr", type=float, default=5.0,
                   help="entropy-minimization step size (full-batch steps on a "
                        "shallow model need a much larger rate than SGD on labels)")
    p.add_argument("--checkpoint", help="write a checkpoint file here")
    p.add_argument("--checkpoint-at", type=int, default=None,
                   help="stream step after which to write the checkpoint")
    p.add_argument("--resume", help="resume from this checkpoint file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="(λ0, w0) error-surface grid")
    _add_data_opts(p)
    _add_model_opt(p)
    p.add_argument("--lambda-grid", type=float, nargs="+",
                   default=[i / 10 for i in range(1, 10)])
    p.add_argument("--w-grid", type=float, nargs="+",
                   default=[i / 10 for i in range(1, 10)])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (default: ATTA_LAB_THREADS or cpu count)")
    p.add_argument("--out", required=True, help="surface CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("probe", help="low- vs high-entropy fine-tuning probe")
    _add_data_opts(p)
    _add_model_opt(p)
    p.add_argument("--n-low", type=int, default=300)
    p.add_argument("--n-high", type=int, default=300)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", help="optional CSV of per-seed losses")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("bounds", help="error-bound algebra for given constants")
    p.add_argument("--lambda0", type=float, required=True)
    p.add_argument("--shift-a", dest="shift_a", type=float, required=True,
                   help="estimated distribution-shift term A")
    p.add_argument("--n", type=int, required=True, help="total training samples")
    p.add_argument("--vc-d", dest="vc_d", type=float, required=True,
                   help="hypothesis-class capacity d")
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--exact", action="store_true",
                   help="use the exact radius instead of c1*sqrt(d/N)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("report", help="side-by-side table from run directories")
    p.add_argument("runs", nargs="+", help="run directories (each holding summary.csv)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
