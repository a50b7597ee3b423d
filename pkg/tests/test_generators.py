import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cnd.discrete import common_shock_model, rademacher_fld_model
from cnd.errors import InputError
from cnd.generators import (
    CommonShockDGModel,
    GaussianFLDModel,
    centered_block,
    centered_summand,
    gen_graph,
    ring,
    sample_dg,
    sample_fld,
)
from cnd.neighborhood import NeighborhoodSystem, degrees, star
from cnd.oracle import check_cnd, cnd_holds
from cnd.rng import map_blocks, normal_block, replication_rng
from cnd.transforms import CUBE, IDENTITY, SIGMOID, Transform, cosine, hermite_nodes, indicator


def test_graph_examples():
    assert gen_graph("ring", 5, k=1) == ring(5)
    assert degrees(ring(5))[0] == 2
    s = gen_graph("star", 5)
    assert len(s[0]) == 4
    assert gen_graph("erdos_renyi", 30, p=0.0, seed=3).edge_count == 0
    hub = gen_graph("ba_hub", 9, m=1)
    assert degrees(hub)[0] == 8
    assert gen_graph("erdos_renyi", 40, p=0.3, seed=7) == gen_graph("erdos_renyi", 40, p=0.3, seed=7)
    with pytest.raises(InputError):
        gen_graph("ring", 5, k=-1)
    with pytest.raises(InputError):
        gen_graph("hypercube", 5)


def test_transform_closed_forms_against_quadrature():
    x, w = hermite_nodes(64)
    for h in (IDENTITY, CUBE, SIGMOID, cosine(1.7), Transform("constant", 2.0)):
        for mu, s in [(0.0, 1.0), (0.4, 0.5), (-1.2, 2.0)]:
            direct = float(np.dot(h(mu + s * x), w))
            sq = float(np.dot(h(mu + s * x) ** 2, w))
            # sigmoid itself uses 32 nodes
            tol = 1e-6 if h.kind == "sigmoid" else 1e-9
            assert float(h.smooth(mu, s)) == pytest.approx(direct, abs=tol)
            assert float(h.smooth_sq(mu, s)) == pytest.approx(sq, abs=tol)


def test_indicator_smoothing_is_normal_cdf():
    from scipy.stats import norm

    assert float(indicator(0.5).smooth(0.0, 2.0)) == pytest.approx(norm.cdf(0.25))
    assert float(indicator(0.0).smooth(1.0, 0.0)) == 0.0
    with pytest.raises(InputError):
        Transform("relu")


def test_rng_streams_are_block_independent():
    whole = normal_block(11, 0, 10, (3,))
    parts = np.concatenate([normal_block(11, 0, 4, (3,)), normal_block(11, 4, 10, (3,))])
    assert np.array_equal(whole, parts)
    assert np.array_equal(replication_rng(11, 5).standard_normal(3), whole[5])


def _sum_block(a, b):
    return normal_block(2, a, b, (4,)).sum(axis=1)


def test_map_blocks_is_worker_independent():
    one = np.concatenate(map_blocks(_sum_block, 2500, workers=1))
    two = np.concatenate(map_blocks(_sum_block, 2500, workers=2))
    assert np.array_equal(one, two)


def test_fld_ring_moments():
    m = GaussianFLDModel.build(ring(6), tau=1.0)
    assert np.allclose(m.latent_var, 4.0)
    y = m.sample_block(0, 0, 40000).y
    assert np.var(y[:, 0]) == pytest.approx(4.0, rel=0.05)
    assert np.cov(y[:, 0], y[:, 1])[0, 1] == pytest.approx(2.0, abs=0.1)
    assert np.cov(y[:, 0], y[:, 3])[0, 1] == pytest.approx(0.0, abs=0.1)


def test_fld_zero_weights_give_iid_noise():
    ns = NeighborhoodSystem.empty(3)
    m = GaussianFLDModel.build(ns, w_self=0.0, tau=2.0)
    s = sample_fld(m, seed=4, rep=2)
    assert np.allclose(s.y, 2.0 * s.base["eta"])
    assert sample_fld(m, 4, 2).y.tobytes() == s.y.tobytes()


def test_centered_summand_examples():
    m = GaussianFLDModel.build(ring(5), tau=1.0)
    s = sample_fld(m, 1)
    eps, eta = s.base["eps"], s.base["eta"]
    assert centered_summand(m, s, 2) == pytest.approx(eps[2] + eta[2])
    lone = GaussianFLDModel.build(NeighborhoodSystem.empty(1), tau=1.0, transform=indicator(0.2))
    s1 = sample_fld(lone, 9)
    from scipy.stats import norm

    want = float(s1.latent[0] <= 0.2) - norm.cdf(0.2 / np.sqrt(2.0))
    assert centered_summand(lone, s1, 0) == pytest.approx(want)


def test_cube_residual_has_mean_zero():
    m = GaussianFLDModel.build(ring(5), tau=1.0, transform=CUBE)
    blk = m.sample_block(3, 0, 100000)
    r = centered_block(m, blk)[:, 0]
    assert abs(r.mean()) < 3 * r.std() / np.sqrt(r.size)


def test_conditional_mean_zero_with_neighbors_fixed():
    m = GaussianFLDModel.build(ring(5), tau=0.5, transform=SIGMOID)
    rng = np.random.default_rng(0)
    eps = rng.standard_normal(5)
    k = 50000
    own = rng.standard_normal((k, 2))
    lat = eps[1] + eps[3] + own[:, 0] + 0.5 * own[:, 1]
    resid = SIGMOID(lat) - SIGMOID.smooth(eps[1] + eps[3], m.own_sd[2])
    assert abs(resid.mean()) < 4 * resid.std() / np.sqrt(k)


def test_dg_single_edge_correlation():
    g = NeighborhoodSystem.from_edges(3, [(0, 1)])
    m = CommonShockDGModel(g, shock_probs=(0.5, 0.5), loc=(0.0, 1.0), scale=(1.0, 1.0))
    blk = m.sample_block(5, 0, 40000)
    c = m.centered(blk)
    corr = np.corrcoef(c.T)
    assert corr[0, 1] == pytest.approx(0.5, abs=0.03)
    assert abs(corr[0, 2]) < 0.03
    assert sample_dg(m, 5, 7).y.tobytes() == m.sample_block(5, 7, 8).y[0].tobytes()
    assert np.allclose(m.cell_sigma2(), 4 + 3)


def test_dg_rejects_directed_graph():
    with pytest.raises(InputError):
        CommonShockDGModel(NeighborhoodSystem.from_mapping(2, {0: (1,)}))


@given(st.integers(2, 5), st.integers(0, 2**10 - 1))
def test_rademacher_fld_is_cnd_for_in_neighbors(n, mask):
    arcs = [(i, j) for i in range(n) for j in range(n) if i != j]
    picked = [a for k, a in enumerate(arcs) if mask >> (k % 10) & 1 and k < 10]
    nbrs = {}
    for i, j in picked:
        nbrs.setdefault(i, []).append(j)
    ns = NeighborhoodSystem.from_mapping(n, {i: tuple(v) for i, v in nbrs.items()})
    if n > 4:
        ns = NeighborhoodSystem.from_mapping(n, {i: v for i, v in nbrs.items() if i < 3 and max(v) < 3})
    m = rademacher_fld_model(ns)
    assert cnd_holds(check_cnd(m, ns))


def test_binary_dg_is_cnd_on_star():
    assert cnd_holds(check_cnd(common_shock_model(star(3)), star(3)))
