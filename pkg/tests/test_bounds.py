import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cnd.bounds import (
    HighDegreePlan,
    MomentEstimates,
    be_terms,
    berry_esseen,
    berry_esseen_condA,
    bracketing_bound,
    estimate_moments,
    finite_max_bound,
    high_degree_bound,
    high_degree_bracketing_bound,
    r_n2_bound,
    smoothing_bound,
    tail_bound,
)
from cnd.errors import InputError
from cnd.generators import CommonShockDGModel, GaussianFLDModel, ring
from cnd.neighborhood import NeighborhoodSystem, degrees, star
from cnd.transforms import CUBE, SIGMOID


def moments(a, b4, r_n2=0.0):
    """Estimates giving a = mu3^3 and mu4^4 = b4 with n = d_mx = d_av = 1."""
    return MomentEstimates(1.0, {1: 0.0, 2: 0.0, 3: a ** (1 / 3), 4: b4 ** 0.25}, 0.0, r_n2)


def test_berry_esseen_examples():
    rep = berry_esseen(moments(0.01, 1e-4), 1, 1, 1)
    assert rep.value == pytest.approx(0.1 + math.log(100) * 0.01)
    assert round(rep.value, 5) == 0.14605
    assert rep.valid
    assert berry_esseen(moments(1.0, 7.0), 1, 1, 1, C=0.5).value == pytest.approx(0.5)
    raw, valid = be_terms(1.0, 7.0, C=0.4)
    assert raw == pytest.approx(0.4) and valid


def test_berry_esseen_invalid_and_clipped():
    rep = berry_esseen(moments(2.0, 0.0), 1, 1, 1)
    assert not rep.valid
    assert rep.terms["raw"] == pytest.approx(math.sqrt(2))
    assert rep.value == 1.0
    assert "hypothesis violated" in rep.to_dict()["warnings"]
    with pytest.raises(InputError):
        be_terms(0.0, 1.0)
    with pytest.raises(InputError):
        berry_esseen(moments(0.5, 0.1), 1, 1, 1, C=0)


def test_cond_a_ignores_r_n():
    m = moments(0.01, 1e-4, r_n2=0.5)
    assert berry_esseen_condA(m, 1, 1, 1).value == pytest.approx(0.14605, abs=1e-5)
    assert berry_esseen(m, 1, 1, 1).value > 0.14605
    deg = berry_esseen_condA(m, 5, 0, 0)
    assert deg.terms["degenerate"] and deg.warnings


def test_r_n2_bound_examples():
    assert r_n2_bound(1e-4 ** 0.25, 100, 2, 2) == pytest.approx(0.64)
    assert r_n2_bound(0.0, 100, 2, 2) == 0
    assert r_n2_bound(0.3, 100, 0, 0) == 0


def test_tail_bound_examples():
    assert tail_bound(2, 25.0, 1.0, 60.0) == pytest.approx(2 * math.exp(-3600 / (6 * 170)))
    # 2 exp(-3.5294) = 0.058644
    assert tail_bound(2, 25.0, 1.0, 60.0) == pytest.approx(0.058644, abs=1e-6)
    assert tail_bound(0, 0.0, 1.0, 3.0, "condA") == pytest.approx(2 * math.exp(-2.88))
    assert tail_bound(0, 0.0, 1.0, 3.0, "condA") == pytest.approx(0.112270, abs=1e-6)
    assert tail_bound(3, 1.0, 1.0, 1e-9) == 1.0
    with pytest.raises(InputError):
        tail_bound(1, 1.0, 1.0, 0.0)
    with pytest.raises(InputError):
        tail_bound(1, 1.0, 0.0, 1.0)


def test_other_evaluators():
    assert round(finite_max_bound(2, 100, 1.0, 9, 0.01), 5) == 1.14600
    assert finite_max_bound(2, 100, 1.0, 9, 0.0) == pytest.approx(3 * math.log(10) / 10)
    assert finite_max_bound(2, 100, 1.0, 0, 0.3) == 0
    assert bracketing_bound(2, 1.5) == 4.5
    assert bracketing_bound(4, 0.0) == 0
    assert high_degree_bracketing_bound(100, 25, 2, 2.0) == pytest.approx(5 * 3 / 10 * 2.0)
    assert smoothing_bound(0.0, 1 / math.sqrt(2 * math.pi), 1e-4, 1) == pytest.approx(0.018948, abs=1e-6)
    assert smoothing_bound(0.2, 0.4, 0.0, 2) == 0.2
    assert smoothing_bound(0.0, 1.0, 1.0, 1) == 3.0


def test_high_degree_full_set_equals_berry_esseen():
    m = MomentEstimates(4.0, {1: 0.05, 2: 0.06, 3: 0.07, 4: 0.08}, 0.0, 0.002)
    plan = HighDegreePlan(tuple(range(50)), 50, 50, 2, 2.0, m.mu, {}, 0.0, 4, m.r_n2, m.sigma2)
    hd, be = high_degree_bound(plan), berry_esseen(m, 50, 2, 2.0)
    assert hd.value == be.value and hd.terms["third_term"] == 0


def test_high_degree_third_term():
    mu = {1: 0.01, 2: 0.01, 3: 0.01, 4: 0.01}
    plan = HighDegreePlan(tuple(range(100)), 101, 100, 2, 2.0, mu, {4: 0.02}, 0.0)
    rep = high_degree_bound(plan, C=1.0)
    assert rep.terms["third_term"] == pytest.approx(0.02 ** 0.8)
    with pytest.raises(InputError):
        HighDegreePlan((), 5, 0, 0, 0.0, mu, {}, 0.0)
    with pytest.raises(InputError):
        HighDegreePlan((0,), 5, 1, 0, 0.0, mu, {}, 0.0, r=5)


@given(st.integers(0, 20), st.floats(0, 100), st.floats(0.01, 10), st.floats(0.1, 200), st.floats(1.01, 3))
def test_tail_bound_monotone(d, V, M, eta, f):
    for variant in ("cnd", "condA"):
        t = tail_bound(d, V, M, eta, variant)
        assert tail_bound(d, V, M, eta * f, variant) <= t
        assert tail_bound(d, V * f + 0.1, M, eta, variant) >= t
        assert tail_bound(d + 1, V, M, eta, variant) >= t


@given(st.floats(1e-6, 1.0), st.floats(0, 10))
def test_be_continuous_near_one(a, b):
    v, _ = be_terms(a, b)
    w, _ = be_terms(min(1.0, a * (1 + 1e-9)), b)
    assert abs(v - w) < 1e-6 * (1 + b)
    assert be_terms(1.0, b)[0] == 1.0


def test_moments_iid_summands():
    n = 50
    m = GaussianFLDModel.build(NeighborhoodSystem.empty(n), w_self=0.0, tau=1.0)
    (est,) = estimate_moments(m, reps=4000, seed=1)
    assert abs(est.sigma2 - n) < 3 * est.sigma2_se + 1e-9
    assert est.mu[2] == pytest.approx(1 / math.sqrt(n), rel=0.1)
    assert est.r_n2 == 0


def test_identity_fld_has_zero_r_n():
    (est,) = estimate_moments(GaussianFLDModel.build(ring(20), tau=1.0), reps=2000, seed=2)
    assert est.r_n2 == pytest.approx(0.0, abs=1e-20)


def test_moment_orderings_and_r_n_bound():
    ns = ring(30)
    m = GaussianFLDModel.build(ns, tau=0.7, transform=SIGMOID)
    (est,) = estimate_moments(m, reps=2000, seed=3, order=16)
    for p in (2, 3):
        assert est.mu[p] <= est.mu[p + 1] + 3 * (est.mu_se[p] + est.mu_se[p + 1])
    d_mx, d_av = degrees(ns)
    assert est.r_n2 <= r_n2_bound(est, ns.n, d_mx, d_av) + 3 * est.r_n2_se


def test_nested_mc_agrees_with_quadrature():
    m = GaussianFLDModel.build(ring(8), tau=1.0, transform=CUBE)
    (q,) = estimate_moments(m, reps=1000, seed=4)
    (mc,) = estimate_moments(m, reps=1000, seed=4, xi_method="nested_mc", inner=2000)
    assert q.sigma2 == mc.sigma2
    assert mc.r_n2 == pytest.approx(q.r_n2, rel=0.25)


def test_dg_cells():
    g = star(6)
    m = CommonShockDGModel(g, shock_probs=(0.5, 0.5), loc=(0.0, 3.0), scale=(1.0, 2.0))
    cells = estimate_moments(m, reps=4000, seed=5)
    assert [c.cell for c in cells] == ["0", "1"]
    want = m.cell_sigma2()
    for c, s2 in zip(cells, want):
        assert abs(c.sigma2 - s2) < 4 * c.sigma2_se
        assert c.r_n2 == 0


def test_degenerate_field_flagged():
    m = GaussianFLDModel.build(ring(5), tau=1.0, transform="constant")
    (est,) = estimate_moments(m, reps=1000)
    assert est.degenerate and est.sigma2 == 0 and all(v == 0 for v in est.mu.values())


def test_estimate_moments_guards():
    m = GaussianFLDModel.build(ring(5))
    with pytest.raises(InputError):
        estimate_moments(m, reps=10)
    with pytest.raises(InputError):
        estimate_moments(m, ns=ring(5, 2))
    with pytest.raises(InputError):
        estimate_moments(object())
