"""Exact conditional-independence oracles over :class:`DiscreteModel`.

Deviations are computed from integer pmf numerators when the model is exact,
so a reported zero is a proof and a nonzero value is an exact ``Fraction``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .discrete import DiscreteModel
from .errors import InputError, ResourceError
from .neighborhood import NeighborhoodSystem, boundary, closure, restrict, vertex_set, weakly_finer

FLOAT_TOL = 1e-9
PAIR_GUARD = 10**6
DENSE_LIMIT = 2 * 10**7


@dataclass(frozen=True)
class CIReport:
    A: tuple
    B: tuple
    conditioning: tuple
    max_deviation: Fraction | float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "A": list(self.A),
            "B": list(self.B),
            "conditioning": list(self.conditioning),
            "max_deviation": float(self.max_deviation),
            "exact": str(self.max_deviation) if isinstance(self.max_deviation, Fraction) else None,
            "pass": self.passed,
        }


def _default_tol(model: DiscreteModel, tol: float | None) -> float:
    if tol is None:
        return 0.0 if model.exact else FLOAT_TOL
    if tol < 0:
        raise InputError("tol must be nonnegative")
    return tol


def _compact(labels: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(labels, return_inverse=True)
    return inv.astype(np.int64).ravel(), len(uniq)


def max_ci_deviation(model: DiscreteModel, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """max |P(a,b|c) - P(a|c)P(b|c)| over cells with P(c) > 0.

    ``a``, ``b``, ``c`` are partition labels over atoms.
    """
    w = model.weights
    pos = w > 0
    a, ka = _compact(a[pos])
    b, kb = _compact(b[pos])
    c, kc = _compact(c[pos])
    w = w[pos]
    if w.size == 0:
        return Fraction(0) if model.exact else 0.0
    if kc * ka * kb <= DENSE_LIMIT:
        return _dense(model, w, a, b, c, ka, kb, kc)
    best = Fraction(0) if model.exact else 0.0
    order = np.argsort(c, kind="stable")
    bounds = np.searchsorted(c[order], np.arange(kc + 1))
    for k in range(kc):
        idx = order[bounds[k]:bounds[k + 1]]
        aa, na = _compact(a[idx])
        bb, nb = _compact(b[idx])
        dev = _dense(model, w[idx], aa, bb, np.zeros(len(idx), dtype=np.int64), na, nb, 1)
        best = max(best, dev)
    return best


def _dense(model, w, a, b, c, ka, kb, kc):
    dtype = w.dtype
    if model.exact and dtype != object and int(w.sum()) ** 2 >= 2**62:
        dtype = object
        w = w.astype(object)
    T = np.zeros((kc, ka, kb), dtype=dtype)
    np.add.at(T, (c, a, b), w)
    Nac = T.sum(axis=2)
    Nbc = T.sum(axis=1)
    Nc = Nac.sum(axis=1)
    num = T * Nc[:, None, None] - Nac[:, :, None] * Nbc[:, None, :]
    num = np.abs(num).reshape(kc, -1).max(axis=1)
    if model.exact:
        return max(Fraction(int(num[k]), int(Nc[k]) ** 2) for k in range(kc) if Nc[k] > 0)
    ok = Nc > 0
    return float((num[ok] / Nc[ok] ** 2).max())


def ci_check(
    model: DiscreteModel,
    left_vars: Sequence,
    right_vars: Sequence,
    cond_vars: Sequence = (),
    tol: float | None = None,
) -> CIReport:
    """Test ``left`` independent of ``right`` given ``cond`` by enumeration."""
    tol = _default_tol(model, tol)
    a = model.joint_labels(left_vars)
    b = model.joint_labels(right_vars)
    c = model.joint_labels(cond_vars)
    dev = max_ci_deviation(model, a, b, c)
    return CIReport((), (), tuple(cond_vars), dev, tol, dev <= tol)


def _subsets(vertices: Sequence[int]):
    for r in range(1, len(vertices) + 1):
        yield from itertools.combinations(vertices, r)


def admissible_pairs(ns: NeighborhoodSystem, Nprime: Sequence[int]):
    """Ordered pairs (A, B) of nonempty subsets of ``Nprime`` with each outside the other's closure."""
    Nprime = tuple(Nprime)
    for A in _subsets(Nprime):
        clA = set(closure(ns, A))
        cand = [j for j in Nprime if j not in clA and not (set(ns[j]) & set(A))]
        for B in _subsets(cand):
            yield A, B


def check_cnd(
    model: DiscreteModel,
    ns: NeighborhoodSystem,
    Nprime: Sequence[int] | None = None,
    tol: float | None = None,
    max_pairs: int = PAIR_GUARD,
    extra_cond: Sequence = (),
) -> list[CIReport]:
    """Run the CND definition over every admissible ordered pair.

    The conditioning field is ``M_nu(A)`` joined with ``G`` (a no-op when the
    boundary is nonempty, since ``G`` lies inside every ``M_i``; for an empty
    boundary it keeps common-shock models CND).  ``extra_cond`` observables
    are joined as well, which is how the starred fields of the invariance
    lemma always condition on the excluded vertices.
    """
    if ns.n != model.n:
        raise InputError(f"system has n={ns.n} but model has n={model.n}")
    Nprime = tuple(range(ns.n)) if Nprime is None else vertex_set(Nprime, ns.n)
    tol = _default_tol(model, tol)
    if 3 ** len(Nprime) > 10 * max_pairs:
        raise ResourceError(f"|N'|={len(Nprime)} gives too many vertex-set pairs")
    side: dict = {}
    cond: dict = {}

    def side_labels(S):
        if S not in side:
            side[S] = model.joint_labels(model.y_refs(S) + model.m_refs(S))
        return side[S]

    reports = []
    for A, B in admissible_pairs(ns, Nprime):
        if len(reports) >= max_pairs:
            raise ResourceError(f"more than {max_pairs} admissible pairs")
        bd = boundary(ns, A)
        if bd not in cond:
            cond[bd] = model.joint_labels(model.m_refs(bd) + model.g_refs() + list(extra_cond))
        dev = max_ci_deviation(model, side_labels(A), side_labels(B), cond[bd])
        reports.append(CIReport(A, B, bd, dev, tol, dev <= tol))
    return reports


def cnd_holds(reports: Sequence[CIReport]) -> bool:
    return all(r.passed for r in reports)


def failures(reports: Sequence[CIReport]) -> list[CIReport]:
    return [r for r in reports if not r.passed]


@dataclass
class MonotonicityReport:
    weakly_finer: bool
    fine_undirected: bool
    fine_reports: list[CIReport]
    coarse_reports: list[CIReport]

    @property
    def fine_cnd(self) -> bool:
        return cnd_holds(self.fine_reports)

    @property
    def coarse_cnd(self) -> bool:
        return cnd_holds(self.coarse_reports)

    @property
    def preconditions_hold(self) -> bool:
        return self.weakly_finer and self.fine_undirected and self.fine_cnd

    @property
    def precondition_violations(self) -> list[str]:
        out = []
        if not self.weakly_finer:
            out.append("fine system is not weakly finer than coarse system")
        if not self.fine_undirected:
            out.append("fine system is directed")
        if not self.fine_cnd:
            out.append("model is not CND for the fine system")
        return out

    @property
    def consistent(self) -> bool:
        """The monotonicity conclusion holds whenever its preconditions do."""
        return not self.preconditions_hold or self.coarse_cnd


def check_monotonicity(
    model: DiscreteModel,
    ns_fine: NeighborhoodSystem,
    ns_coarse: NeighborhoodSystem,
    tol: float | None = None,
) -> MonotonicityReport:
    return MonotonicityReport(
        weakly_finer=weakly_finer(ns_fine, ns_coarse),
        fine_undirected=not ns_fine.directed,
        fine_reports=check_cnd(model, ns_fine, tol=tol),
        coarse_reports=check_cnd(model, ns_coarse, tol=tol),
    )


def starred_model(model: DiscreteModel, Nstar: Sequence[int]) -> DiscreteModel:
    """Each M_i joined with the M's of every vertex outside ``Nstar``."""
    Nstar = set(Nstar)
    outside = [j for j in range(model.n) if j not in Nstar]
    extra = [t for j in outside for t in model.m[j]]
    return model.with_m({i: list(model.m[i]) + extra for i in range(model.n)})


@dataclass
class InvarianceReport:
    """``consistent`` is the lemma's conclusion; its argument needs an undirected system."""

    Nstar: tuple
    directed: bool
    base_reports: list[CIReport]
    reports: list[CIReport]

    @property
    def base_cnd(self) -> bool:
        return cnd_holds(self.base_reports)

    @property
    def passed(self) -> bool:
        return cnd_holds(self.reports)

    @property
    def consistent(self) -> bool:
        return not self.base_cnd or self.passed


def check_invariance(
    model: DiscreteModel,
    ns: NeighborhoodSystem,
    Nstar: Sequence[int],
    tol: float | None = None,
) -> InvarianceReport:
    Nstar = vertex_set(Nstar, ns.n)
    base = check_cnd(model, ns, tol=tol)
    star = starred_model(model, Nstar)
    outside = [j for j in range(ns.n) if j not in set(Nstar)]
    reports = check_cnd(star, restrict(ns, Nstar), Nprime=Nstar, tol=tol, extra_cond=model.m_refs(outside))
    return InvarianceReport(Nstar, ns.directed, base, reports)


@dataclass
class FactorizationReport:
    i_vec: tuple
    split: tuple
    max_abs_diff: Fraction | float
    tol: float
    cells: int = field(default=0)

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tol


def _cond_mean(model: DiscreteModel, values: list, labels: np.ndarray) -> list:
    """E[values | partition] evaluated at every atom."""
    w = model.weights.tolist()
    num: dict = {}
    den: dict = {}
    for v, wt, lab in zip(values, w, labels.tolist()):
        if wt:
            num[lab] = num.get(lab, 0) + v * wt
            den[lab] = den.get(lab, 0) + wt
    if model.exact:
        return [Fraction(num[lab]) / den[lab] if lab in den else None for lab in labels.tolist()]
    return [num[lab] / den[lab] if lab in den else None for lab in labels.tolist()]


def check_product_factorization(
    model: DiscreteModel,
    ns: NeighborhoodSystem,
    i_vec: Sequence[int],
    split: tuple[Sequence[int], Sequence[int]],
    tol: float | None = None,
    given: str = "M",
) -> FactorizationReport:
    """Check E[X(i)|M_nu(i)] = E[X(I1)|M_nu(I1)] * E[X(I2)|M_nu(I2)] atomwise.

    ``X(i)`` multiplies ``Y`` over the entries of ``i_vec`` (with repetition);
    ``split`` assigns each distinct vertex of ``i_vec`` to one side.  With
    ``given="G"`` every conditional expectation is taken given ``G`` instead.
    """
    if given not in ("M", "G"):
        raise InputError("given must be 'M' or 'G'")
    tol = _default_tol(model, tol)
    i_vec = tuple(int(i) for i in i_vec)
    I1, I2 = (tuple(sorted(set(s))) for s in split)
    if set(I1) & set(I2) or set(I1) | set(I2) != set(i_vec) or not I1 or not I2:
        raise InputError("split must partition the vertices of i_vec into two nonempty parts")
    if set(I1) & set(closure(ns, I2)) or set(I2) & set(closure(ns, I1)):
        raise InputError("split parts must lie outside each other's closure")

    def product(entries):
        vals = [1] * model.n_atoms
        for i in entries:
            col = model.numeric_table(("Y", i))
            vals = [v * y for v, y in zip(vals, col)]
        return vals

    def ce(entries, verts):
        refs = model.g_refs() if given == "G" else model.m_refs(boundary(ns, verts)) + model.g_refs()
        lab = model.joint_labels(refs)
        return _cond_mean(model, product(entries), lab)

    full = ce(i_vec, tuple(sorted(set(i_vec))))
    left = ce([i for i in i_vec if i in I1], I1)
    right = ce([i for i in i_vec if i in I2], I2)
    worst = Fraction(0) if model.exact else 0.0
    for f, l, r in zip(full, left, right):
        if f is not None:
            worst = max(worst, abs(f - l * r))
    return FactorizationReport(i_vec, (I1, I2), worst, tol)
