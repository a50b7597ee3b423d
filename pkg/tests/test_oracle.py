from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from brute import atoms, ci_deviation, example1_atoms
from cnd.discrete import (
    DiscreteModel,
    common_shock_model,
    example1_model,
    example1_systems,
    markov_chain_model,
    rademacher_fld_model,
)
from cnd.errors import InputError, ResourceError
from cnd.neighborhood import NeighborhoodSystem, cycle, path, star
from cnd.oracle import (
    admissible_pairs,
    check_cnd,
    check_invariance,
    check_monotonicity,
    check_product_factorization,
    ci_check,
    cnd_holds,
    failures,
)


def two_coins():
    base = [("x", (0, 1)), ("y", (0, 1))]
    half = (Fraction(1, 2), Fraction(1, 2))
    return DiscreteModel.from_functions(
        base, {"x": half, "y": half},
        {0: lambda a: a["x"], 1: lambda a: a["y"]},
        g=[lambda a: a["x"] + a["y"]],
    )


def test_ci_check_on_coins():
    m = two_coins()
    assert ci_check(m, ["x"], ["y"]).max_deviation == 0
    assert ci_check(m, ["x"], ["x"]).max_deviation == Fraction(1, 4)
    r = ci_check(m, ["x"], ["y"], ["G:0"])
    assert r.max_deviation == Fraction(1, 4) and not r.passed


def test_brute_reference_matches_frozen_values():
    # frozen values below come from this independent enumeration
    w = example1_atoms()
    dev = ci_deviation(w, lambda y: y[0], lambda y: y[3], lambda y: y[2])
    assert dev == Fraction(1, 9)
    dev = ci_deviation(w, lambda y: (y[0], y[1]), lambda y: y[3], lambda y: y[2])
    assert dev == Fraction(1, 18)
    assert ci_deviation(w, lambda y: y[0], lambda y: y[3], lambda y: ()) == 0


def test_example1_fine_system_is_cnd():
    fine, coarse = example1_systems()
    m = example1_model()
    assert cnd_holds(check_cnd(m, fine))


def test_example1_coarse_failures():
    fine, coarse = example1_systems()
    bad = {(r.A, r.B): r.max_deviation for r in failures(check_cnd(example1_model(), coarse))}
    assert bad == {
        ((0,), (3,)): Fraction(1, 9),
        ((3,), (0,)): Fraction(1, 9),
        ((0, 1), (3,)): Fraction(1, 18),
        ((3,), (0, 1)): Fraction(1, 18),
    }


def test_example1_monotonicity_preconditions():
    fine, coarse = example1_systems()
    rep = check_monotonicity(example1_model(), fine, coarse)
    assert rep.weakly_finer and rep.fine_cnd and not rep.coarse_cnd
    assert rep.precondition_violations == ["fine system is directed"]
    assert rep.consistent


def test_example1_invariance_fails_for_directed_system():
    fine, _ = example1_systems()
    rep = check_invariance(example1_model(), fine, [0, 1, 3])
    assert rep.directed and rep.base_cnd and not rep.passed
    assert max(r.max_deviation for r in rep.reports) == Fraction(1, 9)


def test_common_shock_star_invariance():
    g = star(3)
    m = common_shock_model(g, idio=[0])
    assert cnd_holds(check_cnd(m, g))
    for Nstar in ([1, 2, 3], [0, 1], [2]):
        rep = check_invariance(m, g, Nstar)
        assert rep.passed and rep.consistent


def test_common_shock_not_cnd_without_g():
    g = path(3)
    m = common_shock_model(g)
    stripped = DiscreteModel(m.base_vars, m.pmf_exact, m.y, m.m, None)
    A, B = (0,), (2,)
    cond = stripped.m_refs([1])
    # M_1 already contains the shock, so this still holds
    assert ci_check(stripped, stripped.y_refs(A), stripped.y_refs(B), cond).passed
    # with every M trivial the shock leaks through
    trivial = DiscreteModel(m.base_vars, m.pmf_exact, m.y, {}, None)
    assert not ci_check(trivial, trivial.y_refs(A), trivial.y_refs(B)).passed


def test_markov_chain_is_cnd_on_path():
    m = markov_chain_model(5, Fraction(1, 2), [[Fraction(3, 4), Fraction(1, 4)], [Fraction(1, 3), Fraction(2, 3)]])
    assert cnd_holds(check_cnd(m, path(5)))
    assert not cnd_holds(check_cnd(m, NeighborhoodSystem.empty(5)))


def test_markov_chain_against_brute_force():
    P = [[Fraction(3, 4), Fraction(1, 4)], [Fraction(1, 3), Fraction(2, 3)]]
    m = markov_chain_model(3, Fraction(1, 2), P)
    rep = ci_check(m, ["Y:0"], ["Y:2"])
    weighted = []
    for a, _ in atoms({f"x{k}": (0, 1) for k in range(3)}):
        p = Fraction(1, 2) * P[a["x0"]][a["x1"]] * P[a["x1"]][a["x2"]]
        weighted.append(((a["x0"], a["x1"], a["x2"]), p))
    assert rep.max_deviation == ci_deviation(weighted, lambda x: x[0], lambda x: x[2], lambda x: ())
    assert rep.max_deviation > 0


def test_fld_factorization():
    ns = path(3)
    m = rademacher_fld_model(ns)
    rep = check_product_factorization(m, ns, [0, 0, 2], ([0], [2]))
    assert rep.passed and rep.max_abs_diff == 0
    with pytest.raises(InputError):
        check_product_factorization(m, ns, [0, 1], ([0], [1]))


def test_factorization_fails_without_cnd():
    ns = NeighborhoodSystem.empty(3)
    m = rademacher_fld_model(path(3), m_field="trivial")
    rep = check_product_factorization(m, ns, [0, 1], ([0], [1]))
    assert not rep.passed


def test_model_json_round_trip():
    m = example1_model()
    back = DiscreteModel.from_json(m.to_json())
    assert back.to_json() == m.to_json()
    fine, _ = example1_systems()
    assert [r.max_deviation for r in check_cnd(back, fine)] == [r.max_deviation for r in check_cnd(m, fine)]


def test_float_mode_uses_tolerance():
    m = example1_model()
    fm = DiscreteModel(m.base_vars, [float(p) for p in m.pmf_exact], m.y, m.m, exact=False)
    fine, coarse = example1_systems()
    assert cnd_holds(check_cnd(fm, fine))
    worst = max(r.max_deviation for r in check_cnd(fm, coarse))
    assert worst == pytest.approx(1 / 9, abs=1e-12)


def test_input_guards():
    m = example1_model()
    with pytest.raises(InputError):
        check_cnd(m, cycle(5))
    with pytest.raises(InputError):
        ci_check(m, ["Y:9"], ["Y:0"])
    with pytest.raises(InputError):
        DiscreteModel([("a", (0, 1))], [Fraction(1, 2), Fraction(1, 3)], {0: [0, 1]})
    with pytest.raises(ResourceError):
        check_cnd(m, cycle(4), max_pairs=3)


def test_admissible_pairs_avoid_closures():
    ns = cycle(5)
    for A, B in admissible_pairs(ns, range(5)):
        assert not set(B) & {j for i in A for j in (i,) + ns[i]}


@given(st.integers(2, 5), st.integers(0, 2**10 - 1))
def test_common_shock_models_are_cnd(n, mask):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = [p for k, p in enumerate(pairs) if mask >> k & 1]
    g = NeighborhoodSystem.from_edges(n, edges)
    if len(edges) > 6:
        return
    m = common_shock_model(g, q_edge=(Fraction(1, 3), Fraction(3, 4)))
    assert cnd_holds(check_cnd(m, g))


def test_example1_factorization_across_the_ends():
    fine, _ = example1_systems()
    rep = check_product_factorization(example1_model(), fine, [0, 3], ([0], [3]))
    assert rep.passed and rep.max_abs_diff == 0


def test_star_invariance_without_hub_has_empty_boundaries():
    from cnd.neighborhood import boundary, restrict

    g = star(4)
    rep = check_invariance(common_shock_model(g), g, [1, 2, 3, 4])
    assert rep.passed
    r = restrict(g, [1, 2, 3, 4])
    assert all(boundary(r, [i]) == () for i in range(5))


def test_two_edge_dependency_graph_factorizes():
    g = NeighborhoodSystem.from_edges(4, [(0, 1), (2, 3)])
    m = common_shock_model(g)
    assert check_product_factorization(m, g, [0, 2], ([0], [2])).passed
    assert check_product_factorization(m, g, [1, 1, 3], ([1], [3]), given="G").passed


@given(st.integers(0, 3), st.integers(0, 3))
def test_ci_check_symmetric(i, j):
    m = example1_model()
    cond = ["Y:2"]
    a = ci_check(m, [f"Y:{i}"], [f"Y:{j}"], cond).max_deviation
    b = ci_check(m, [f"Y:{j}"], [f"Y:{i}"], cond).max_deviation
    assert a == b >= 0
