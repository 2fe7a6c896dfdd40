"""Release acceptance suite: one test per shipping criterion.

Run with ``pytest -v tests/test_acceptance.py`` — the verbose listing gives
one pass/fail line per criterion; each test additionally prints a
``criterion NN: PASS — <measured quantity>`` line with the numbers it
verified (shown with ``-s`` or on failure).

These tests intentionally re-derive expectations through independent
arithmetic (finite differences, exact rational bookkeeping, brute-force
grid minimization, byte comparison) rather than trusting library output.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from atta_lab import cli, models, theory
from atta_lab.baselines import run_stream_baseline
from atta_lab.clustering import AnchorSet, ic_step
from atta_lab.engine import EngineConfig, run_stream
from atta_lab.rng import Rng
from atta_lab.streams import Oracle, gen_benchmark, make_stream, pretrain_source

GRID = [i / 10 for i in range(1, 10)]

TINY_SPEC = {
    "dims": 4, "classes": 2, "seed": 3, "class_sep": 6.0,
    "sizes.source_train": 200, "sizes.target_train": 55,
    "sizes.test": 40, "sizes.batch": 10,
    "domains[1].rotation": "30 0", "domains[1].translation": "0.5",
    "domains[2].rotation": "60 0", "domains[2].translation": "1.0",
}


def mean(values):
    return sum(values) / len(values)


@pytest.fixture(scope="module")
def tiny():
    bm = gen_benchmark(TINY_SPEC)
    return bm, pretrain_source(bm)


@pytest.fixture(scope="module")
def surface(benchmark, phi):
    """Shared 9x9 grid / 3 seed / 500-sample error surface (criteria 6, 7)."""
    started = time.perf_counter()
    cells = theory.error_surface_sweep(benchmark, phi, GRID, GRID,
                                       n_seeds=3, master_seed=0, n_train=500)
    return cells, time.perf_counter() - started


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept-data") / "synth"
    assert cli.main(["gen-data", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def synth_model(tmp_path_factory, synth_dir):
    path = tmp_path_factory.mktemp("accept-model") / "phi.json"
    assert cli.main(["pretrain", "--data", str(synth_dir), "--out", str(path)]) == 0
    return path


# ---------------------------------------------------------------------------


def test_criterion_01_gradient_correctness():
    """Analytic CE gradients match central finite differences to 1e-4."""
    started = time.perf_counter()
    g = np.random.default_rng(101)
    worst = 0.0
    for trial in range(100):
        dim = int(g.integers(2, 8))
        n_classes = int(g.integers(2, 6))
        hidden = int(g.choice([0, 0, 3]))
        params = models.init_params(dim, n_classes, Rng(trial), hidden=hidden,
                                    scale=float(g.uniform(0.1, 1.0)))
        x = g.normal(size=(int(g.integers(1, 13)), dim))
        y = g.integers(0, n_classes, size=len(x))
        weights = g.uniform(0.1, 2.0, size=len(x)) if trial % 3 == 0 else None
        _, grad = models.ce_loss_grad(params, x, y, sample_weights=weights)

        h = 1e-5
        numeric, analytic = [], []
        for arr, garr in zip(params._arrays(), grad._arrays()):
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                up = models.ce_loss(params, x, y, sample_weights=weights)
                arr[idx] = orig - h
                down = models.ce_loss(params, x, y, sample_weights=weights)
                arr[idx] = orig
                fd[idx] = (up - down) / (2 * h)
            numeric.append(fd.ravel())
            analytic.append(garr.ravel())
        numeric = np.concatenate(numeric)
        analytic = np.concatenate(analytic)
        rel = float(np.linalg.norm(analytic - numeric)
                    / max(np.linalg.norm(numeric), 1e-12))
        worst = max(worst, rel)
        assert rel < 1e-4
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0
    print(f"criterion 01: PASS — worst relative gradient error {worst:.2e} "
          f"over 100 instances in {elapsed:.2f}s")


def test_criterion_02_weight_conservation():
    """50 unclipped clustering steps keep Σ anchor weights == samples fed."""
    started = time.perf_counter()
    g = np.random.default_rng(202)
    anchors = AnchorSet()
    rng = Rng(42)
    total = 0
    next_id = 0

    def oracle(ids):
        return np.asarray(ids, dtype=np.int64) % 4

    for step in range(1, 51):
        n = int(g.integers(0, 13))
        x = g.normal(size=(n, 3))
        ids = np.arange(next_id, next_id + n, dtype=np.int64)
        next_id += n
        total += n
        anchors, info = ic_step(anchors, x, int(g.integers(1, 6)),
                                lambda raw: raw, oracle, rng.split("s", step),
                                budget_remaining=None, step=step, new_ids=ids)
        assert info.dropped_weight == 0
        carried = sum((a.weight for a in anchors.anchors), Fraction(0))
        assert carried == total   # exact rational equality, zero tolerance
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    print(f"criterion 02: PASS — {total} samples over 50 steps, anchor mass "
          f"exactly {total} ({len(anchors)} anchors) in {elapsed:.2f}s")


def test_criterion_03_budget_safety(tiny):
    """|anchors| never exceeds the budget across 100 randomized runs."""
    bm, phi = tiny
    g = np.random.default_rng(303)
    checked = 0
    for trial in range(100):
        e_low = float(g.uniform(0.0, 0.4))
        cfg = EngineConfig(
            e_low=e_low, e_high=e_low + float(g.uniform(1e-6, 0.4)),
            budget=int(g.integers(0, 26)),
            nc_init=int(g.integers(1, 5)), nc_increase=int(g.integers(0, 4)),
            max_inner_steps=5,
        )
        order = "domain-wise" if trial % 2 == 0 else "random"
        batches = make_stream(bm, order, Rng(trial)).batches
        state, report = run_stream(phi, batches, cfg, seed=trial, oracle=Oracle(bm))
        for record in report.steps:
            assert record.budget_used <= cfg.budget
            checked += 1
        assert state.budget_used <= cfg.budget
    print(f"criterion 03: PASS — 0 violations over 100 runs ({checked} steps)")


def test_criterion_04_bound_algebra():
    """Diagonal bound identity, radical floor on a 100x100 grid, and the
    strict adapted-below-limit margin across the (A, λ0) grid."""
    values = np.linspace(0.005, 0.995, 100)
    for lam in values:
        for a, b in ((0.3, 0.5), (1.7, 0.05), (0.0, 1.0)):
            assert theory.eval_test_error_bound(lam, lam, a, b) == lam * a + b
    worst_diag = 0.0
    for w0 in values:
        for lam in values:
            r = theory.radical_term(w0, lam)
            if w0 == lam:
                worst_diag = max(worst_diag, abs(r - 1.0))
                assert abs(r - 1.0) <= 1e-12
            else:
                assert r > 1.0 + 1e-12
    lam_grid = [round(0.05 * i, 2) for i in range(1, 20)]
    for a in [round(0.1 * i, 1) for i in range(1, 21)]:
        fixed = theory.check_thm2(a, theory.confidence_radius(1000, 50), lam_grid)
        assert fixed.all_strict
        varying = theory.check_thm2(a, lambda lam: 0.3 * (1.0 + lam), lam_grid)
        assert varying.all_strict
    print(f"criterion 04: PASS — diagonal identity exact, worst |radical-1| on "
          f"diagonal {worst_diag:.1e}, margins strict for 20 shift values")


def test_criterion_05_closed_form_vs_grid():
    """Closed-form optimal w0 lands within one 1e-4 grid cell of brute force."""
    started = time.perf_counter()
    g = np.random.default_rng(505)
    ws = np.arange(0.0, 1.0 + 1e-9, 1e-4)
    worst = 0.0
    for _ in range(50):
        lam = float(g.uniform(0.05, 0.95))
        a = float(g.uniform(0.0, 2.0))
        n = int(g.integers(100, 5001))
        d = float(g.uniform(5.0, 200.0))
        c1 = float(g.uniform(0.5, 2.0))
        w_star = theory.optimal_w0(lam, a, n, d, c1)
        b = theory.approx_radius(n, d, c1)
        curve = ws * a + np.sqrt(ws ** 2 / lam + (1.0 - ws) ** 2 / (1.0 - lam)) * b
        w_grid = float(ws[int(np.argmin(curve))])
        gap = abs(w_star - w_grid)
        worst = max(worst, gap)
        assert gap <= 1e-4 + 1e-9
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    print(f"criterion 05: PASS — max |closed-form − grid argmin| {worst:.1e} "
          f"over 50 tuples in {elapsed:.2f}s")


def test_criterion_06_test_loss_minimum_near_diagonal(surface):
    """Per-λ0 argmin of mean test loss sits at w0 ≤ λ0 + one grid step."""
    cells, elapsed = surface
    assert elapsed < 900.0
    hits = []
    for lam in GRID[1:-1]:   # 0.2 .. 0.8
        means = {}
        for c in cells:
            if c.lambda0 == lam:
                means.setdefault(c.w0, []).append(c.test_loss)
        best_w = min(means, key=lambda w: (mean(means[w]), w))
        hits.append(best_w <= lam + 0.1 + 1e-9)
    frac = sum(hits) / len(hits)
    assert frac >= 0.8
    print(f"criterion 06: PASS — argmin-w0 at or below diagonal+step for "
          f"{sum(hits)}/{len(hits)} λ0 values (sweep {elapsed:.1f}s)")


def test_criterion_07_combined_loss_prefers_high_lambda(surface):
    """Global argmin of mean combined loss lies at λ0 ≥ 0.4."""
    cells, _ = surface
    means = {}
    for c in cells:
        means.setdefault((c.lambda0, c.w0), []).append(c.combined_loss)
    (best_lam, best_w) = min(means, key=lambda key: (mean(means[key]),) + key)
    assert best_lam >= 0.4
    print(f"criterion 07: PASS — combined-loss argmin at (λ0, w0) = "
          f"({best_lam:.1f}, {best_w:.1f})")


def test_criterion_08_entropy_selection_tradeoff(benchmark, phi):
    """Low-entropy tuning preserves source CE; high-entropy tuning wins on
    target CE — each in at least 4 of 5 seeds."""
    results = theory.entropy_probe(benchmark, phi, 300, 300, seeds=range(5))
    by_seed = {}
    for r in results:
        by_seed.setdefault(r.seed, {})[r.selection] = r
    source_wins = sum(pair["low"].source_loss < pair["high"].source_loss
                      for pair in by_seed.values())
    target_wins = sum(pair["high"].target_loss < pair["low"].target_loss
                      for pair in by_seed.values())
    assert source_wins >= 4
    assert target_wins >= 4
    print(f"criterion 08: PASS — source CE lower for low-entropy picks in "
          f"{source_wins}/5 seeds, target CE lower for high-entropy in {target_wins}/5")


def test_criterion_09_stream_comparison_margins(benchmark, phi):
    """Engine beats source-only, 1/10-step entropy minimization, and random
    selection at equal realized budget on mean post target accuracy (both
    stream orders), and forgets less source accuracy than 10-step tent."""
    src = benchmark.domain_test(0)
    tgt = benchmark.target_test_pool()
    phi_src = models.accuracy(phi, *src)
    phi_tgt = models.accuracy(phi, *tgt)
    cfg = EngineConfig(budget=300)
    lines = []
    for order in ("domain-wise", "random"):
        tgt_acc = {m: [] for m in ("engine", "tent1", "tent10", "random")}
        src_acc = {m: [] for m in ("engine", "tent10")}
        for seed in range(5):
            batches = make_stream(benchmark, order, Rng(seed)).batches
            state, report = run_stream(phi, batches, cfg, seed, Oracle(benchmark))
            tgt_acc["engine"].append(models.accuracy(state.theta, *tgt))
            src_acc["engine"].append(models.accuracy(state.theta, *src))
            t1, _ = run_stream_baseline("tent", phi, batches, Oracle(benchmark),
                                        seed, tent_steps=1, tent_lr=5.0)
            tgt_acc["tent1"].append(models.accuracy(t1, *tgt))
            t10, _ = run_stream_baseline("tent", phi, batches, Oracle(benchmark),
                                         seed, tent_steps=10, tent_lr=5.0)
            tgt_acc["tent10"].append(models.accuracy(t10, *tgt))
            src_acc["tent10"].append(models.accuracy(t10, *src))
            rnd, _ = run_stream_baseline(
                "random", phi, batches, Oracle(benchmark), seed,
                total_budget=report.realized_budget, finetune_cfg=cfg.finetune())
            tgt_acc["random"].append(models.accuracy(rnd, *tgt))
        engine_mean = mean(tgt_acc["engine"])
        margins = {
            "source-only": engine_mean - phi_tgt,
            "tent-1": engine_mean - mean(tgt_acc["tent1"]),
            "tent-10": engine_mean - mean(tgt_acc["tent10"]),
            "random-equal-budget": engine_mean - mean(tgt_acc["random"]),
        }
        for name, margin in margins.items():
            assert margin > 0, f"{order}: engine does not beat {name} ({margin:+.4f})"
        engine_drop = phi_src - mean(src_acc["engine"])
        tent10_drop = phi_src - mean(src_acc["tent10"])
        assert engine_drop < tent10_drop
        lines.append(f"{order}: " + " ".join(
            f"{k} {v:+.4f}" for k, v in margins.items())
            + f" | source drop {engine_drop:+.4f} vs tent-10 {tent10_drop:+.4f}")
    print("criterion 09: PASS — " + "; ".join(lines))


def test_criterion_10_divergence_proxy_sanity():
    """Discriminator proxy: ~0 on identical, ≥ 1.8 on separated, symmetric."""
    worst_identical = 0.0
    min_separated = 2.0
    worst_asym = 0.0
    for seed in range(5):
        g = np.random.default_rng(1000 + seed)
        a = g.standard_normal((1000, 8))
        b = g.standard_normal((1000, 8))
        c = g.standard_normal((1000, 8))
        c[:, 0] += 6.0
        d_same = theory.proxy_h_delta_h(a, b, Rng(seed).split("id"))
        d_ab = theory.proxy_h_delta_h(a, c, Rng(seed).split("ab"))
        d_ba = theory.proxy_h_delta_h(c, a, Rng(seed).split("ba"))
        worst_identical = max(worst_identical, abs(d_same))
        min_separated = min(min_separated, d_ab, d_ba)
        worst_asym = max(worst_asym, abs(d_ab - d_ba))
    assert worst_identical <= 0.15
    assert min_separated >= 1.8
    assert worst_asym <= 0.1
    print(f"criterion 10: PASS — identical ≤ {worst_identical:.3f}, separated "
          f"≥ {min_separated:.3f}, asymmetry ≤ {worst_asym:.3f} over 5 seeds")


def test_criterion_11_determinism_and_resume(synth_dir, synth_model, tmp_path):
    """Same (seed, config) → byte-identical artifacts; checkpoint-resume
    reproduces the uninterrupted run exactly."""
    base = ["run", "--method", "simatta", "--data", str(synth_dir),
            "--model", str(synth_model), "--budget", "300", "--seed", "0"]
    rerun_a, rerun_b = tmp_path / "a", tmp_path / "b"
    assert cli.main(base + ["--out", str(rerun_a)]) == 0
    assert cli.main(base + ["--out", str(rerun_b)]) == 0
    assert ((rerun_a / "summary.csv").read_bytes()
            == (rerun_b / "summary.csv").read_bytes())
    assert ((rerun_a / "metrics.jsonl").read_bytes()
            == (rerun_b / "metrics.jsonl").read_bytes())

    ckpt = tmp_path / "ckpt.json"
    interrupted = tmp_path / "resumed"
    assert cli.main(base + ["--out", str(tmp_path / "c"), "--checkpoint", str(ckpt),
                            "--checkpoint-at", "7"]) == 0
    assert cli.main(base + ["--out", str(interrupted), "--resume", str(ckpt)]) == 0
    assert ((rerun_a / "summary.csv").read_bytes()
            == (interrupted / "summary.csv").read_bytes())
    assert ((rerun_a / "metrics.jsonl").read_bytes()
            == (interrupted / "metrics.jsonl").read_bytes())
    print("criterion 11: PASS — re-run and checkpoint-resume byte-identical "
          "(summary.csv, metrics.jsonl)")
