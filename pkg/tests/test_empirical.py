import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from cnd.empirical import (
    FunctionClass,
    Marginals,
    bracketing_count,
    bracketing_number,
    class_distances,
    cov_kernel,
    entropy_integral,
    entropy_integral_counts,
    equicontinuity_modulus,
    ks_distance,
    marginals,
    normal_cdf,
    rho_bar,
    rho_bar_mc,
    run_empirical,
    stable_joint_stats,
    stable_joint_test,
)
from cnd.errors import InputError
from cnd.generators import CommonShockDGModel, GaussianFLDModel, gen_graph, ring
from cnd.neighborhood import NeighborhoodSystem
from cnd.transforms import IDENTITY, SIGMOID, Transform, constant, indicator

# int_0^1 sqrt(1 + log ceil(1/e^2)) de by a 10^6-point log-spaced midpoint rule
CEIL_REFERENCE = 1.71995984


def std_normal(n=1):
    return Marginals(np.ones(1), np.zeros((1, n)), np.ones((1, n)))


def test_rho_bar_examples():
    m = GaussianFLDModel.build(ring(6), tau=1.0)
    assert rho_bar(constant(1.0), m) == pytest.approx(1.0)
    assert rho_bar(constant(0.0), m) == 0.0
    assert rho_bar(indicator(0.7), m) == pytest.approx(math.sqrt(norm.cdf(0.7 / 2.0)))
    vals = m.sample_block(0, 0, 4000).y
    est, se = rho_bar_mc(indicator(0.7), vals)
    assert abs(est - rho_bar(indicator(0.7), m)) < 4 * se


def test_single_bracket_when_epsilon_large():
    fc = FunctionClass.indicator_grid(np.linspace(-2, 2, 9))
    b = bracketing_number(fc, std_normal(), 1.0)
    assert b.count == 1 and b.to_dict()["kind"] == "upper"
    lo, hi = b.brackets[0]
    assert lo(np.array([5.0]))[0] == 0 and hi(np.array([-50.0]))[0] == 1


def test_standard_normal_grid_at_half():
    fc = FunctionClass.indicator_grid(np.linspace(-3, 3, 61))
    b = bracketing_number(fc, std_normal(), 0.5)
    assert b.count <= 5
    assert all(w <= 0.5 + 1e-12 for w in b.widths)
    assert bracketing_count(fc, std_normal(), 0.5) == b.count


def test_finite_list_brackets_are_degenerate():
    fc = FunctionClass.finite_list([SIGMOID, indicator(0.0), constant(0.5)])
    b = bracketing_number(fc, std_normal(), 0.01)
    assert b.count == 3 and all(lo == hi for lo, hi in b.brackets)
    with pytest.raises(InputError):
        FunctionClass.finite_list([IDENTITY])
    with pytest.raises(InputError):
        bracketing_number(fc, std_normal(), 0.0)


@given(st.floats(0.03, 0.9), st.integers(2, 40))
def test_brackets_contain_members(eps, k):
    m = CommonShockDGModel(ring(10), shock_probs=(0.3, 0.7), loc=(0.0, 1.0), scale=(1.0, 2.0))
    fc = FunctionClass.indicator_grid(np.linspace(-4, 5, k))
    b = bracketing_number(fc, m, eps)
    y = marginals(m).sample(10000, np.random.default_rng(0))
    for h, r in zip(fc.members, b.assignment):
        lo, hi = b.brackets[r]
        assert ((lo(y) <= h(y)) & (h(y) <= hi(y))).all()
    if b.count > 1:
        # widths are exact; also check them by Monte Carlo
        for lo, hi in b.brackets:
            est, se = rho_bar_mc(Transform("identity"), (hi(y) - lo(y))[:, None])
            assert est <= eps + 3 * se + 1e-9


def test_entropy_examples():
    single = FunctionClass.indicator_grid([0.3])
    m = std_normal(3)
    r = entropy_integral(single, m)
    assert r.value == pytest.approx(1.0, abs=1e-3)
    zero = FunctionClass.finite_list([constant(0.0)])
    assert entropy_integral(zero, m).value == 0.0
    ceil = entropy_integral_counts(lambda e: math.ceil(1 / e**2 - 1e-12), 1.0)
    assert ceil.value == pytest.approx(CEIL_REFERENCE, abs=1e-3)
    assert not ceil.divergent


def test_entropy_reference_independently():
    x = np.geomspace(1e-12, 1.0, 10**6 + 1)
    mid = np.sqrt(x[:-1] * x[1:])
    f = np.sqrt(1.0 + np.log(np.ceil(1.0 / mid**2)))
    assert float((f * np.diff(x)).sum()) == pytest.approx(CEIL_REFERENCE, abs=2e-6)


def test_divergent_tail_is_flagged():
    r = entropy_integral_counts(lambda e: math.exp(1 / e**4), 1.0, cutoff=0.5, max_evals=500)
    assert r.divergent or r.warnings


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=12, unique=True), st.data())
def test_entropy_monotone_under_subclass(ts, data):
    fc = FunctionClass.indicator_grid(ts)
    idx = data.draw(st.lists(st.integers(0, len(ts) - 1), min_size=1, unique=True))
    m = std_normal(2)
    assert entropy_integral(fc.subclass(idx), m).value <= entropy_integral(fc, m).value + 1e-4


def test_identity_run_is_exactly_normal():
    n, w, tau = 40, 1.0, 0.8
    m = GaussianFLDModel.build(ring(n), w_self=w, tau=tau)
    run = run_empirical(m, None, [IDENTITY, constant(0.0)], 10000, seed=1)
    sd = math.sqrt(w**2 + tau**2)
    assert ks_distance(run.gn[:, 0], lambda x: norm.cdf(x / sd)) < 0.02
    assert np.all(run.gn[:, 1] == 0)
    k = cov_kernel(run, 0, 0)[0]
    assert abs(k["value"] - sd**2) < 3 * k["se"]
    assert cov_kernel(run, 0, 1)[0]["value"] == 0


def test_decomposition_with_full_star():
    m = GaussianFLDModel.build(ring(12), tau=1.0, transform=SIGMOID)
    run = run_empirical(m, None, [SIGMOID, indicator(0.2)], 1000, seed=2, Nstar=range(12))
    assert np.all(run.Rn_star == 0) and np.all(run.rho_n_star == 0)
    assert run.decomposition_error() <= 1e-12


def test_decomposition_identity_with_hub_removed():
    g = gen_graph("ba_hub", 31, m=1)
    m = GaussianFLDModel.build(g, tau=1.0, transform=SIGMOID, column_weights={30: 2.0})
    run = run_empirical(m, None, [SIGMOID, indicator(0.0)], 1000, seed=3, Nstar=range(30))
    assert run.decomposition_error() < 1e-12
    assert np.abs(run.Rn_star).max() > 0
    csv = run.to_csv().splitlines()
    assert csv[0] == "replication,member,gn,gn_star,Rn_star,rho_n_star"
    assert len(csv) == 1 + 1000 * 2
    dg = CommonShockDGModel(gen_graph("star", 9))
    dgrun = run_empirical(dg, None, [IDENTITY], 1000, seed=3, Nstar=range(1, 9))
    assert dgrun.decomposition_error() < 1e-12 and np.all(dgrun.rho_n_star == 0)


def test_ks_examples():
    rng = np.random.default_rng(5)
    assert ks_distance(rng.standard_normal(10000), normal_cdf) < 1.628 / math.sqrt(10000)
    assert ks_distance(np.zeros(500), normal_cdf) == pytest.approx(0.5)
    assert ks_distance(rng.standard_normal(100), normal_cdf) < 1.628 / 10
    x = rng.standard_normal(300)
    assert ks_distance(x, x) == 0
    gap = norm.cdf(0.25) - norm.cdf(-0.25)
    assert ks_distance(rng.standard_normal(200000) + 0.5, normal_cdf) == pytest.approx(gap, abs=0.01)
    with pytest.raises(InputError):
        ks_distance(np.zeros(99), normal_cdf)


def test_stable_mixture_detected():
    m = CommonShockDGModel(ring(200), shock_probs=(0.5, 0.5), loc=(0.0, 0.0), scale=(1.0, 3.0))
    rep = stable_joint_test(m, None, 10000, seed=4, t_grid=np.linspace(-3, 3, 25))
    assert max(rep.cell_ks) < 0.03
    assert rep.factorization_error < 0.03
    assert rep.unconditional_ks > 0.05


def test_stable_degenerate_cell_and_independence():
    rng = np.random.default_rng(6)
    S = rng.standard_normal(10000)
    U = rng.integers(0, 2, 10000)
    rep = stable_joint_stats(S, U, np.linspace(-3, 3, 13))
    assert rep.factorization_error < 0.03
    one = stable_joint_stats(S, np.zeros(10000, dtype=int), [0.0])
    assert one.cell_ks[0] == pytest.approx(one.unconditional_ks)
    empty = stable_joint_stats(S, U, [0.0], cells=[0, 1, 2])
    assert empty.cell_counts[2] == 0 and empty.flagged


def test_modulus_examples():
    m = GaussianFLDModel.build(ring(30), tau=1.0)
    fc = FunctionClass.indicator_grid(np.linspace(-2, 2, 9))
    run = run_empirical(m, None, fc, 2000, seed=7)
    D = class_distances(fc, m)
    dmin = D[np.triu_indices(9, 1)].min()
    curve = equicontinuity_modulus(run, D, sorted([dmin / 2, dmin, D.max() / 4, D.max() / 2, D.max()]))
    vals = [v for _, v in curve]
    assert vals[0] == 0
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    rng_mean = (run.gn.max(axis=1) - run.gn.min(axis=1)).mean()
    assert vals[-1] == pytest.approx(rng_mean)


def test_class_distances_match_quadrature():
    m = GaussianFLDModel.build(ring(5), tau=1.0)
    fc = FunctionClass.indicator_grid([-0.5, 0.5])
    D = class_distances(fc, m)
    fl = FunctionClass.finite_list([SIGMOID, constant(0.0)])
    D2 = class_distances(fl, m)
    assert D[0, 1] == pytest.approx(math.sqrt(norm.cdf(0.25) - norm.cdf(-0.25)))
    assert D2[0, 1] == pytest.approx(rho_bar(SIGMOID, m), rel=1e-6)


def test_envelope_violations():
    fc = FunctionClass.indicator_grid([0.0, 1.0], scale=0.5)
    assert fc.envelope_violations(np.linspace(-3, 3, 101)) == 0
    bad = FunctionClass("finite_list", (SIGMOID,), constant(0.1))
    assert bad.envelope_violations(np.array([5.0])) == 1
    with pytest.raises(InputError):
        FunctionClass.indicator_grid([0.0], scale=0.0)


def test_run_rejects_foreign_models():
    with pytest.raises(InputError):
        run_empirical(object(), None, [IDENTITY], 10, 0)
    m = GaussianFLDModel.build(ring(5))
    with pytest.raises(InputError):
        run_empirical(m, NeighborhoodSystem.empty(5), [IDENTITY], 10, 0)
