"""Stream-adaptation comparison on the synthetic benchmark.

Runs the active engine against the non-active baselines over several seeds
and both stream orders, then prints mean post-adaptation accuracies, source
drops, and the engine's margins.  The random-selection baseline is given the
engine's *realized* label count seed-for-seed, so the comparison is at equal
spend rather than equal cap.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from atta_lab import models
from atta_lab.baselines import run_stream_baseline
from atta_lab.engine import EngineConfig, run_stream
from atta_lab.rng import Rng
from atta_lab.streams import Oracle, gen_benchmark, make_stream, pretrain_source


def target_mean(post: dict[str, float], benchmark) -> float:
    return float(np.mean([post[d.name] for d in benchmark.domains[1:]]))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--budget", type=int, default=300)
    ap.add_argument("--tent-lr", type=float, default=5.0)
    ap.add_argument("--orders", nargs="+", default=["domain-wise", "random"],
                    choices=["domain-wise", "random"])
    args = ap.parse_args()

    benchmark = gen_benchmark()
    phi = pretrain_source(benchmark)
    eval_sets = benchmark.eval_sets()
    src_phi = models.accuracy(phi, *eval_sets["source"])
    src_only = target_mean(
        {n: models.accuracy(phi, x, y) for n, (x, y) in eval_sets.items()}, benchmark)
    cfg = EngineConfig(budget=args.budget)
    print(f"pretrained source accuracy {src_phi:.4f}; "
          f"source-only target mean {src_only:.4f}")

    for order in args.orders:
        t0 = time.time()
        per: dict[str, list[float]] = {}
        drops: dict[str, list[float]] = {}
        labels: dict[str, list[int]] = {}

        def record(name: str, theta, used: int) -> None:
            post = {n: models.accuracy(theta, x, y) for n, (x, y) in eval_sets.items()}
            per.setdefault(name, []).append(target_mean(post, benchmark))
            drops.setdefault(name, []).append(src_phi - post["source"])
            labels.setdefault(name, []).append(used)

        for seed in args.seeds:
            stream = make_stream(benchmark, order, Rng(seed))
            state, rep = run_stream(phi, stream.batches, cfg, seed, Oracle(benchmark))
            record("engine", state.theta, rep.realized_budget)
            for name, kwargs in (
                ("random", dict(total_budget=rep.realized_budget, finetune_cfg=cfg.finetune())),
                ("entropy", dict(total_budget=rep.realized_budget, finetune_cfg=cfg.finetune())),
                ("tent-1", dict(tent_steps=1, tent_lr=args.tent_lr)),
                ("tent-10", dict(tent_steps=10, tent_lr=args.tent_lr)),
                ("stats-adapt", {}),
            ):
                method = name.split("-")[0] if name.startswith("tent") else name
                theta, brep = run_stream_baseline(method, phi, stream.batches,
                                                  Oracle(benchmark), seed, **kwargs)
                record(name, theta, brep.realized_budget)

        print(f"\n== order {order} (seeds {args.seeds}, {time.time() - t0:.0f}s)")
        print(f"{'method':>12} {'target mean':>12} {'source drop':>12} {'labels':>7}")
        for name in per:
            print(f"{name:>12} {np.mean(per[name]):>12.4f} "
                  f"{np.mean(drops[name]):>12.4f} {np.mean(labels[name]):>7.0f}")
        eng = float(np.mean(per["engine"]))
        for rival in ("random", "entropy", "tent-1", "tent-10", "stats-adapt"):
            print(f"  engine - {rival}: {eng - float(np.mean(per[rival])):+.4f}")
        print(f"  engine - source-only: {eng - src_only:+.4f}")
        print(f"  tent-10 drop - engine drop: "
              f"{float(np.mean(drops['tent-10'])) - float(np.mean(drops['engine'])):+.4f}")


if __name__ == "__main__":
    main()
