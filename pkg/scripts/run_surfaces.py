"""Error-surface sweep over (source fraction λ0, source weight w0).

Fine-tunes the pretrained model on weighted source/target mixtures across a
grid, averages losses over repeats, prints the per-λ0 argmin of the test loss
(which should track the diagonal) and the global argmin of the combined
source + test loss (which should sit in the source-heavy half), and
optionally writes the raw cells to CSV.
"""

from __future__ import annotations

import argparse
import csv
import os
import time

import numpy as np

from atta_lab.streams import gen_benchmark, pretrain_source
from atta_lab.theory import error_surface_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", type=float, nargs="+",
                    default=[round(0.1 * i, 1) for i in range(1, 10)])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=500)
    ap.add_argument("--workers", type=int,
                    default=int(os.environ.get("ATTA_LAB_THREADS", "1")))
    ap.add_argument("--csv", help="write per-cell losses here")
    args = ap.parse_args()

    benchmark = gen_benchmark()
    phi = pretrain_source(benchmark)
    t0 = time.time()
    cells = error_surface_sweep(benchmark, phi, args.grid, args.grid,
                                args.repeats, args.seed, n_train=args.n_train,
                                workers=args.workers)
    print(f"{len(cells)} cells in {time.time() - t0:.1f}s")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["lambda0", "w0", "seed", "test_loss", "source_loss"])
            for c in cells:
                writer.writerow([repr(c.lambda0), repr(c.w0), c.seed,
                                 repr(c.test_loss), repr(c.source_loss)])
        print(f"wrote {args.csv}")

    test_mean: dict[tuple[float, float], list[float]] = {}
    comb_mean: dict[tuple[float, float], list[float]] = {}
    for c in cells:
        test_mean.setdefault((c.lambda0, c.w0), []).append(c.test_loss)
        comb_mean.setdefault((c.lambda0, c.w0), []).append(c.combined_loss)

    print("\nper-λ0 argmin of mean test loss (expect w0 at or below λ0):")
    for lam in args.grid:
        means = {w: float(np.mean(test_mean[(lam, w)])) for w in args.grid}
        best = min(means, key=lambda w: (means[w], w))
        print(f"  λ0={lam:.1f}: w0*={best:.1f} (test loss {means[best]:.4f})")

    comb = {k: float(np.mean(v)) for k, v in comb_mean.items()}
    best = min(comb, key=lambda k: (comb[k], k))
    print(f"\ncombined-loss argmin: λ0={best[0]:.1f}, w0={best[1]:.1f} "
          f"(loss {comb[best]:.4f})")


if __name__ == "__main__":
    main()
