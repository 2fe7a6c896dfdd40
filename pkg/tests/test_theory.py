import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atta_lab import theory
from atta_lab.models import ModelParams
from atta_lab.rng import Rng
from atta_lab.streams import gen_benchmark, pretrain_source
from atta_lab.theory import (
    DomainBoundInputs,
    check_thm2,
    empirical_weighted_error,
    entropy_probe,
    error_surface_sweep,
    eval_source_error_bound,
    eval_test_error_bound,
    eval_thm1_domain_bound,
    evaluate_surface_cell,
    optimal_w0,
    optimal_w0_for_radius,
    proxy_h_delta_h,
    radical_term,
    surface_cell_seed,
)

SMALL_SPEC = {
    "dims": 6, "classes": 3, "seed": 5, "class_sep": 4.0,
    "sizes.source_train": 300, "sizes.target_train": 120,
    "sizes.test": 80, "sizes.batch": 30,
    "domains[1].rotation": "50 0 0",
    "domains[1].translation": "0.8",
}


@pytest.fixture(scope="module")
def small_bm():
    return gen_benchmark(SMALL_SPEC)


@pytest.fixture(scope="module")
def small_phi(small_bm):
    return pretrain_source(small_bm)


# ---------------------------------------------------------------------------
# closed-form bound algebra


def test_radical_term_value():
    assert abs(radical_term(0.3, 0.5) - math.sqrt(1.16)) < 1e-12


def test_radical_is_one_exactly_on_diagonal():
    for v in np.linspace(0.05, 0.95, 19):
        assert radical_term(v, v) == 1.0


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
@settings(max_examples=60, deadline=None)
def test_radical_at_least_one(w0, lambda0):
    r = radical_term(w0, lambda0)
    assert r >= 1.0
    if abs(w0 - lambda0) > 1e-6:
        assert r > 1.0


def test_radical_rejects_out_of_range():
    with pytest.raises(ValueError):
        radical_term(1.2, 0.5)
    with pytest.raises(ValueError):
        radical_term(0.5, -0.1)


def test_test_bound_no_adaptation_limit():
    assert eval_test_error_bound(1.0, 1.0, 0.7, 0.2) == pytest.approx(0.9, abs=1e-12)


def test_test_bound_on_diagonal():
    # minimum over w0 at fixed λ0 sits on the diagonal with value w0*A + B
    for lam in (0.2, 0.5, 0.8):
        assert eval_test_error_bound(lam, lam, 1.3, 0.4) == pytest.approx(lam * 1.3 + 0.4, abs=1e-12)


def test_test_bound_worked_value():
    got = eval_test_error_bound(0.3, 0.5, 1.0, 0.5)
    assert got == pytest.approx(0.3 + 0.5 * math.sqrt(1.16), abs=1e-12)
    assert got == pytest.approx(0.8385, abs=5e-5)


def test_source_bound_worked_values():
    assert eval_source_error_bound(1.0, 1.0, 0.7, 0.2) == pytest.approx(0.2, abs=1e-12)
    assert eval_source_error_bound(0.0, 0.0, 0.7, 0.2) == pytest.approx(0.9, abs=1e-12)
    got = eval_source_error_bound(0.3, 0.5, 1.0, 0.5)
    assert got == pytest.approx(0.7 + 0.5 * math.sqrt(1.16), abs=1e-12)
    assert got == pytest.approx(1.2385, abs=5e-5)


def test_bounds_infinite_on_impossible_ratio():
    # all mass forced onto an empty side -> +inf sentinel (when B > 0)
    assert eval_test_error_bound(0.5, 0.0, 1.0, 0.5) == math.inf
    assert eval_source_error_bound(0.5, 1.0, 1.0, 0.5) == math.inf
    # with B = 0 the radical does not contribute
    assert eval_test_error_bound(0.5, 0.0, 1.0, 0.0) == pytest.approx(0.5)


def test_bounds_reject_negative_terms():
    with pytest.raises(ValueError):
        eval_test_error_bound(0.5, 0.5, -1.0, 0.5)
    with pytest.raises(ValueError):
        eval_source_error_bound(0.5, 0.5, 1.0, -0.5)


def test_radical_lower_bound_on_grid():
    # EB_T >= w0*A + B everywhere, equality exactly on the diagonal
    a, b = 0.8, 0.3
    grid = np.linspace(0.05, 0.95, 19)
    for lam in grid:
        for w0 in grid:
            val = eval_test_error_bound(w0, lam, a, b)
            floor = w0 * a + b
            assert val >= floor - 1e-12
            if abs(w0 - lam) < 1e-12:
                assert val == pytest.approx(floor, abs=1e-12)
            else:
                assert val > floor


# ---------------------------------------------------------------------------
# optimal source weight


def test_optimal_w0_no_shift_matches_ratio():
    for lam in (0.0, 0.3, 0.7, 1.0):
        assert optimal_w0(lam, 0.0, 500, 20) == lam


def test_optimal_w0_budget_rich_sentinel():
    # strong shift, generous labeled data: B^2 < A^2(1-lambda0) -> w0* = 0
    assert optimal_w0(0.1, 2.0, 1000, 100, 1.0) == 0.0
    assert optimal_w0_for_radius(0.5, 1.0, 0.1) == 0.0


def test_optimal_w0_worked_value_agrees_with_grid():
    got = optimal_w0(0.9, 0.2, 1000, 100, 1.0)
    assert got == pytest.approx(0.8420259036239253, abs=1e-12)
    b = math.sqrt(100 / 1000)
    grid = np.arange(0.0, 1.0 + 1e-12, 1e-4)
    vals = [eval_test_error_bound(w, 0.9, 0.2, b) for w in grid]
    assert abs(got - grid[int(np.argmin(vals))]) <= 1e-4 + 1e-12


@given(st.floats(0.05, 0.95), st.floats(0.0, 1.5), st.floats(0.05, 1.5))
@settings(max_examples=40, deadline=None)
def test_optimal_w0_never_beats_grid(lambda0, a, b):
    w_star = optimal_w0_for_radius(lambda0, a, b)
    grid = np.arange(0.0, 1.0 + 1e-12, 1e-3)
    best = min(eval_test_error_bound(w, lambda0, a, b) for w in grid)
    # the closed form is a true minimizer: never worse than the grid by more
    # than the grid's own resolution error
    assert eval_test_error_bound(w_star, lambda0, a, b) <= best + 1e-9


def test_optimal_w0_rejects_bad_inputs():
    with pytest.raises(ValueError):
        optimal_w0(0.5, -0.1, 100, 10)
    with pytest.raises(ValueError):
        optimal_w0(0.5, 0.1, 0, 10)
    with pytest.raises(ValueError):
        optimal_w0(0.5, 0.1, 100, 10, c1=0.0)


# ---------------------------------------------------------------------------
# theorem-2 style comparison and radii


def test_check_thm2_strict_for_positive_shift():
    rep = check_thm2(1.0, 0.5, [round(0.1 * i, 1) for i in range(1, 10)])
    assert rep.all_strict
    assert rep.limit == pytest.approx(1.5)
    for lam, margin in zip(rep.lambdas, rep.margins):
        assert margin == pytest.approx((1.0 - lam) * 1.0, abs=1e-12)


def test_check_thm2_flags_zero_shift():
    rep = check_thm2(0.0, 0.5, [0.2, 0.5, 0.8])
    assert not rep.all_strict
    assert all(m == pytest.approx(0.0, abs=1e-12) for m in rep.margins)


def test_check_thm2_with_lambda_dependent_radius():
    rep = check_thm2(0.8, lambda lam: 0.2 + 0.1 * lam, [0.25, 0.75])
    assert rep.all_strict
    assert math.isnan(rep.limit)
    for lam, bound in zip(rep.lambdas, rep.bounds):
        assert bound == pytest.approx(lam * 0.8 + 0.2 + 0.1 * lam, abs=1e-12)


def test_confidence_radius_formula():
    got = theory.confidence_radius(1000, 100)
    want = 2.0 * math.sqrt((100 * math.log(2000) - math.log(0.05)) / 2000)
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(1.2353833236916891, abs=1e-12)


def test_approx_radius_formula():
    assert theory.approx_radius(400, 100, 2.0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        theory.approx_radius(0, 100)
    with pytest.raises(ValueError):
        theory.confidence_radius(100, 10, delta=1.5)


# ---------------------------------------------------------------------------
# weighted empirical error and the multi-domain bound


def threshold_model():
    # 1-D model predicting class 0 for x > 0
    return ModelParams(np.array([[1.0, -1.0]]), np.zeros(2))


def dataset_with_error(n, n_wrong):
    x = np.ones((n, 1))
    y = np.zeros(n, dtype=np.int64)
    y[:n_wrong] = 1   # model says 0; these count as errors
    return x, y


def test_weighted_error_mixes_exactly():
    params = threshold_model()
    sets = [dataset_with_error(10, 2), dataset_with_error(10, 6)]
    assert empirical_weighted_error(params, sets, [0.5, 0.5]) == pytest.approx(0.4, abs=1e-12)
    assert empirical_weighted_error(params, sets, [1.0, 0.0]) == pytest.approx(0.2, abs=1e-12)
    assert empirical_weighted_error(params, sets, [0.0, 1.0]) == pytest.approx(0.6, abs=1e-12)


def test_weighted_error_perfect_model_is_zero():
    params = threshold_model()
    sets = [dataset_with_error(8, 0), dataset_with_error(4, 0)]
    assert empirical_weighted_error(params, sets, [0.25, 0.75]) == 0.0


def test_weighted_error_input_validation():
    params = threshold_model()
    sets = [dataset_with_error(4, 0)]
    with pytest.raises(ValueError):
        empirical_weighted_error(params, sets, [0.5, 0.5])
    with pytest.raises(ValueError):
        empirical_weighted_error(params, sets, [0.9])
    # positive weight on an empty dataset is an error ...
    empty = (np.zeros((0, 1)), np.zeros(0, dtype=np.int64))
    with pytest.raises(ValueError):
        empirical_weighted_error(params, [sets[0], empty], [0.5, 0.5])
    # ... but zero weight on it is fine
    assert empirical_weighted_error(params, [sets[0], empty], [1.0, 0.0]) == 0.0


def single_domain_inputs(**kw):
    base = dict(w=(1.0,), lam=(1.0,), dists=((0.0,),), gamma=(0.0,),
                d=10, n=400, m=200, delta=0.05)
    base.update(kw)
    return DomainBoundInputs(**base)


def c_term(w, lam, d, n, delta):
    s = sum(wi * wi / li for wi, li in zip(w, lam) if wi > 0)
    return math.sqrt(s * (d * math.log(2 * n) - math.log(delta)) / (2 * n))


def test_thm1_single_domain_collapses_to_confidence():
    inp = single_domain_inputs()
    want = 2.0 * c_term((1.0,), (1.0,), 10, 400, 0.05)
    assert eval_thm1_domain_bound(inp, 0) == pytest.approx(want, abs=1e-12)


def test_thm1_one_hot_weights_drop_cross_terms():
    # cross-domain penalties vanish only through zero weights, whatever the
    # distances say
    inp = DomainBoundInputs(
        w=(1.0, 0.0), lam=(0.5, 0.5),
        dists=((0.0, 1.7), (1.7, 0.0)), gamma=(0.0, 0.4),
        d=10, n=400, m=200, eps_star=(0.03, 0.0),
    )
    want = 0.03 + 2.0 * c_term((1.0,), (0.5,), 10, 400, 0.05)
    assert eval_thm1_domain_bound(inp, 0) == pytest.approx(want, abs=1e-12)


def test_thm1_three_domain_hand_computed():
    inp = DomainBoundInputs(
        w=(0.5, 0.3, 0.2), lam=(0.5, 0.25, 0.25),
        dists=((0.0, 0.4, 0.8), (0.4, 0.0, 0.5), (0.8, 0.5, 0.0)),
        gamma=(0.0, 0.1, 0.2), d=10, n=400, m=200, delta=0.05,
        eps_star=(0.05, 0.0, 0.0),
    )
    conf_m = 2.0 * math.sqrt((2 * 10 * math.log(400) + math.log(40.0)) / 200)
    cross = 0.3 * (0.5 * 0.4 + conf_m + 0.1) + 0.2 * (0.5 * 0.8 + conf_m + 0.2)
    want = 0.05 + 2.0 * cross + 2.0 * c_term((0.5, 0.3, 0.2), (0.5, 0.25, 0.25), 10, 400, 0.05)
    got = eval_thm1_domain_bound(inp, 0)
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(2.6385584063309997, abs=1e-12)


def test_thm1_input_validation():
    with pytest.raises(ValueError):
        eval_thm1_domain_bound(single_domain_inputs(w=(0.9,)), 0)
    with pytest.raises(ValueError):
        eval_thm1_domain_bound(single_domain_inputs(), 1)
    with pytest.raises(ValueError):
        # zero data fraction cannot carry weight
        eval_thm1_domain_bound(DomainBoundInputs(
            w=(0.5, 0.5), lam=(1.0, 0.0), dists=((0.0, 0.1), (0.1, 0.0)),
            gamma=(0.0, 0.0), d=10, n=100, m=100), 0)


# ---------------------------------------------------------------------------
# divergence proxy


def test_proxy_rejects_small_sets():
    gen = np.random.default_rng(0)
    with pytest.raises(ValueError):
        proxy_h_delta_h(gen.normal(size=(19, 3)), gen.normal(size=(40, 3)), Rng(0))
    with pytest.raises(ValueError):
        proxy_h_delta_h(gen.normal(size=(40, 3)), gen.normal(size=(40, 2)), Rng(0))


def test_proxy_same_distribution_near_zero():
    gen = np.random.default_rng(1)
    x1 = gen.normal(size=(200, 4))
    x2 = gen.normal(size=(200, 4))
    assert proxy_h_delta_h(x1, x2, Rng(0)) <= 0.5


def test_proxy_identical_set_near_zero():
    gen = np.random.default_rng(2)
    x = gen.normal(size=(200, 4))
    assert proxy_h_delta_h(x, x.copy(), Rng(0)) <= 0.5


def test_proxy_separated_gaussians_near_two():
    gen = np.random.default_rng(3)
    x1 = gen.normal(size=(200, 4))
    x2 = gen.normal(size=(200, 4)) + np.array([8.0, 0, 0, 0])
    d = proxy_h_delta_h(x1, x2, Rng(0))
    assert d >= 1.5
    assert d <= 2.0


def test_gamma_estimate_direction():
    gen = np.random.default_rng(4)
    n = 100
    y = gen.integers(0, 2, size=n)
    means = np.array([[-3.0, 0.0], [3.0, 0.0]])
    x1 = means[y] + gen.normal(size=(n, 2))
    y2 = gen.integers(0, 2, size=n)
    x2 = means[y2] + gen.normal(size=(n, 2))
    agreeable = theory.estimate_gamma(x1, y, x2, y2, Rng(0))
    assert agreeable <= 0.3
    # same features, contradictory labels: no single model fits both
    conflicted = theory.estimate_gamma(x1, y, x1, 1 - y, Rng(0))
    assert conflicted >= 0.5


# ---------------------------------------------------------------------------
# error surface and entropy probe


def test_surface_cell_seed_arithmetic():
    assert surface_cell_seed(0, 5) == 5
    assert surface_cell_seed(12, 10) == 12 ^ 10
    assert surface_cell_seed(2**63, 1) == 2**63 + 1


def test_surface_sweep_layout_and_determinism(small_bm, small_phi):
    cells = error_surface_sweep(small_bm, small_phi, [0.3, 0.7], [0.2, 0.8],
                                n_seeds=1, master_seed=9, n_train=60)
    assert [(c.lambda0, c.w0) for c in cells] == \
        [(0.3, 0.2), (0.3, 0.8), (0.7, 0.2), (0.7, 0.8)]
    assert [c.seed for c in cells] == [9 ^ 0, 9 ^ 1, 9 ^ 2, 9 ^ 3]
    for c in cells:
        assert math.isfinite(c.test_loss) and math.isfinite(c.source_loss)
        assert c.combined_loss == pytest.approx(c.test_loss + c.source_loss)
    again = error_surface_sweep(small_bm, small_phi, [0.3, 0.7], [0.2, 0.8],
                                n_seeds=1, master_seed=9, n_train=60)
    assert [(c.test_loss, c.source_loss) for c in again] == \
        [(c.test_loss, c.source_loss) for c in cells]


def test_surface_sweep_parallel_matches_serial(small_bm, small_phi):
    kw = dict(lambda_grid=[0.4, 0.6], w_grid=[0.5], n_seeds=2, master_seed=3, n_train=60)
    serial = error_surface_sweep(small_bm, small_phi, workers=1, **kw)
    parallel = error_surface_sweep(small_bm, small_phi, workers=2, **kw)
    assert [(c.lambda0, c.w0, c.seed, c.test_loss, c.source_loss) for c in serial] == \
           [(c.lambda0, c.w0, c.seed, c.test_loss, c.source_loss) for c in parallel]


def test_surface_cell_all_source_ignores_w0(small_bm, small_phi):
    a = evaluate_surface_cell(small_bm, small_phi, 1.0, 0.2, seed=3, n_train=60)
    b = evaluate_surface_cell(small_bm, small_phi, 1.0, 1.0, seed=3, n_train=60)
    # no target samples: the weight has nothing to balance against
    assert a.test_loss == b.test_loss and a.source_loss == b.source_loss


def test_surface_cell_rejects_oversized_train(small_bm, small_phi):
    with pytest.raises(ValueError):
        evaluate_surface_cell(small_bm, small_phi, 1.0, 0.5, seed=0, n_train=10_000)


def test_probe_full_pool_selections_identical(small_bm, small_phi):
    n = len(small_bm.target_pool()[1])
    res = entropy_probe(small_bm, small_phi, n, n, seeds=[0])
    assert {r.selection for r in res} == {"low", "high"}
    lo, hi = (r for r in res)
    assert lo.source_loss == hi.source_loss
    assert lo.target_loss == hi.target_loss


def test_probe_rejects_oversized_selection(small_bm, small_phi):
    n = len(small_bm.target_pool()[1])
    with pytest.raises(ValueError):
        entropy_probe(small_bm, small_phi, n + 1, 10, seeds=[0])


def test_probe_reports_per_seed(small_bm, small_phi):
    res = entropy_probe(small_bm, small_phi, 30, 30, seeds=[0, 1])
    assert len(res) == 4
    assert sorted({r.seed for r in res}) == [0, 1]
