"""Finite-support joint models for exact conditional-independence checks.

A :class:`DiscreteModel` holds a joint pmf over the product support of a few
base variables together with tabulated observables: ``Y_i`` per vertex, the
generators of each ``M_i`` and of ``G``.  Every table is an array over atoms
in row-major order of the base supports.  Sigma-fields are represented by the
partition their generating observables induce, so joining sigma-fields is
just concatenating observable lists.
"""

from __future__ import annotations

import itertools
import json
import math
from fractions import Fraction
from numbers import Rational
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, ResourceError
from .neighborhood import NeighborhoodSystem

EXACT_ATOM_LIMIT = 10**5
ATOM_GUARD = 10**7

Atom = Mapping[str, Any]


def _labels(values: Sequence) -> np.ndarray:
    index: dict = {}
    return np.fromiter((index.setdefault(v, len(index)) for v in values), dtype=np.int64, count=len(values))


class DiscreteModel:
    """Joint pmf plus observable tables; vertices are ``0 .. n-1``."""

    def __init__(
        self,
        base_vars: Sequence[tuple[str, Sequence]],
        pmf: Sequence,
        y_defs: Mapping[int, Sequence],
        m_defs: Mapping[int, Sequence[Sequence]] | None = None,
        g_defs: Sequence[Sequence] | None = None,
        exact: bool | None = None,
    ):
        self.base_vars = tuple((str(name), tuple(support)) for name, support in base_vars)
        names = [b[0] for b in self.base_vars]
        if len(set(names)) != len(names):
            raise InputError("duplicate base variable names")
        self.shape = tuple(len(s) for _, s in self.base_vars)
        self.n_atoms = math.prod(self.shape)
        if self.n_atoms > ATOM_GUARD:
            raise ResourceError(f"{self.n_atoms} atoms exceeds the guard of {ATOM_GUARD}")
        pmf = list(pmf)
        if len(pmf) != self.n_atoms:
            raise InputError(f"pmf has {len(pmf)} entries, expected {self.n_atoms}")
        rational = all(isinstance(p, Rational) for p in pmf)
        if exact is None:
            exact = rational and self.n_atoms <= EXACT_ATOM_LIMIT
        if exact and not rational:
            raise InputError("exact mode needs rational pmf entries")
        self.exact = bool(exact)
        if self.exact:
            probs = [Fraction(p) for p in pmf]
            if any(p < 0 for p in probs):
                raise InputError("negative probability")
            if sum(probs) != 1:
                raise InputError(f"pmf sums to {sum(probs)}, not 1")
            self.denominator = math.lcm(*(p.denominator for p in probs)) if probs else 1
            nums = [p.numerator * (self.denominator // p.denominator) for p in probs]
            dtype = np.int64 if self.denominator < 2**31 else object
            self.weights = np.array(nums, dtype=dtype)
            self.pmf_exact = tuple(probs)
        else:
            w = np.asarray([float(p) for p in pmf], dtype=float)
            if (w < 0).any():
                raise InputError("negative probability")
            if abs(w.sum() - 1.0) > 1e-12:
                raise InputError(f"pmf sums to {w.sum()!r}, not 1 within 1e-12")
            self.denominator = 1
            self.weights = w
            self.pmf_exact = None

        n = len(y_defs)
        if sorted(int(k) for k in y_defs) != list(range(n)):
            raise InputError("y_defs must be keyed by vertices 0..n-1")
        self.n = n
        self.y = {int(k): self._table(v, f"Y[{k}]") for k, v in y_defs.items()}
        m_defs = m_defs or {}
        self.m = {i: tuple(self._table(t, f"M[{i}]") for t in m_defs.get(i, m_defs.get(str(i), ())))
                  for i in range(n)}
        self.g = tuple(self._table(t, "G") for t in (g_defs or ()))
        self._label_cache: dict = {}

    def _table(self, values: Sequence, what: str) -> tuple:
        values = tuple(values)
        if len(values) != self.n_atoms:
            raise InputError(f"{what}: table has {len(values)} entries, expected {self.n_atoms}")
        return values

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_functions(
        cls,
        base_vars: Sequence[tuple[str, Sequence]],
        weight: Callable[[Atom], Any] | Mapping[str, Sequence],
        y: Mapping[int, Callable[[Atom], Any]],
        m: Mapping[int, Sequence[Callable[[Atom], Any]]] | None = None,
        g: Sequence[Callable[[Atom], Any]] | None = None,
        exact: bool | None = None,
    ) -> "DiscreteModel":
        """Tabulate functions of the base atom.

        ``weight`` is either a function of the atom or a mapping from base
        variable name to its marginal pmf (independent base variables).
        """
        names = [name for name, _ in base_vars]
        if isinstance(weight, Mapping):
            marginals = weight
            supports = {name: tuple(s) for name, s in base_vars}

            def weight(atom, _m=marginals, _s=supports):
                p = 1
                for name in names:
                    p = p * _m[name][_s[name].index(atom[name])]
                return p

        atoms = [dict(zip(names, vals)) for vals in itertools.product(*(s for _, s in base_vars))]
        if len(atoms) > ATOM_GUARD:
            raise ResourceError(f"{len(atoms)} atoms exceeds the guard of {ATOM_GUARD}")
        pmf = [weight(a) for a in atoms]
        y_defs = {i: [f(a) for a in atoms] for i, f in y.items()}
        m_defs = {i: [[f(a) for a in atoms] for f in fs] for i, fs in (m or {}).items()}
        g_defs = [[f(a) for a in atoms] for f in (g or ())]
        return cls(base_vars, pmf, y_defs, m_defs, g_defs, exact=exact)

    def with_m(self, m_defs: Mapping[int, Sequence[Sequence]]) -> "DiscreteModel":
        """A copy with replaced ``M`` generators (tables, not functions)."""
        pmf = self.pmf_exact if self.exact else self.weights.tolist()
        return DiscreteModel(self.base_vars, pmf, self.y, m_defs, self.g, exact=self.exact)

    # -- observables ----------------------------------------------------------

    def labels(self, ref) -> np.ndarray:
        """Integer partition labels of one observable over the atoms.

        ``ref`` is a base variable name, ``"Y:i"``, ``"M:i:k"`` or ``"G:k"``
        (tuples ``("Y", i)`` etc. are accepted too).
        """
        key = self._normalize_ref(ref)
        if key not in self._label_cache:
            self._label_cache[key] = _labels(self.table(key))
        return self._label_cache[key]

    def _normalize_ref(self, ref) -> tuple:
        if isinstance(ref, str):
            parts = ref.split(":")
            if len(parts) == 1:
                ref = ("base", parts[0])
            else:
                ref = (parts[0],) + tuple(int(p) for p in parts[1:])
        ref = tuple(ref)
        kind = ref[0]
        try:
            if kind == "base":
                if ref[1] not in [b[0] for b in self.base_vars]:
                    raise KeyError(ref[1])
            elif kind == "Y":
                self.y[ref[1]]
            elif kind == "M":
                self.m[ref[1]][ref[2]]
            elif kind == "G":
                self.g[ref[1]]
            else:
                raise KeyError(kind)
        except (KeyError, IndexError, TypeError):
            raise InputError(f"cannot resolve variable reference {ref!r}") from None
        return ref

    def table(self, ref) -> tuple:
        key = self._normalize_ref(ref)
        kind = key[0]
        if kind == "base":
            pos = [b[0] for b in self.base_vars].index(key[1])
            support = self.base_vars[pos][1]
            stride = math.prod(self.shape[pos + 1:])
            idx = (np.arange(self.n_atoms) // stride) % self.shape[pos]
            return tuple(support[k] for k in idx)
        if kind == "Y":
            return self.y[key[1]]
        if kind == "M":
            return self.m[key[1]][key[2]]
        return self.g[key[1]]

    def y_refs(self, vertices: Iterable[int]) -> list[tuple]:
        return [("Y", i) for i in vertices]

    def m_refs(self, vertices: Iterable[int]) -> list[tuple]:
        return [("M", i, k) for i in vertices for k in range(len(self.m[i]))]

    def g_refs(self) -> list[tuple]:
        return [("G", k) for k in range(len(self.g))]

    def joint_labels(self, refs: Sequence) -> np.ndarray:
        """Labels of the partition generated by several observables."""
        refs = [self._normalize_ref(r) for r in refs]
        key = ("joint",) + tuple(sorted(set(refs)))
        cached = self._label_cache.get(key)
        if cached is not None:
            return cached
        code = np.zeros(self.n_atoms, dtype=np.int64)
        for r in key[1:]:
            lab = self.labels(r)
            code = code * (int(lab.max()) + 1) + lab
            _, code = np.unique(code, return_inverse=True)
            code = code.astype(np.int64).ravel()
        self._label_cache[key] = code
        return code

    def probability(self, mask: np.ndarray):
        """P(event) for a boolean mask over atoms (Fraction in exact mode)."""
        if self.exact:
            return Fraction(int(self.weights[mask].sum()), self.denominator)
        return float(self.weights[mask].sum())

    def numeric_table(self, ref) -> list:
        vals = self.table(ref)
        return [Fraction(v) if self.exact and isinstance(v, (Rational, int)) else v for v in vals]

    # -- serialization --------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, Fraction):
                return [v.numerator, v.denominator]
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, (np.floating,)):
                return float(v)
            return v

        if self.exact:
            pmf = [[p.numerator, p.denominator] for p in self.pmf_exact]
        else:
            pmf = [float(x) for x in self.weights]
        return {
            "base_vars": [{"name": name, "support": [enc(v) for v in s]} for name, s in self.base_vars],
            "exact": self.exact,
            "pmf": pmf,
            "y": {str(i): [enc(v) for v in self.y[i]] for i in range(self.n)},
            "m": {str(i): [[enc(v) for v in t] for t in self.m[i]] for i in range(self.n)},
            "g": [[enc(v) for v in t] for t in self.g],
        }

    @classmethod
    def from_json(cls, text: str | Mapping) -> "DiscreteModel":
        doc = json.loads(text) if isinstance(text, str) else text

        def dec(v):
            if isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) for x in v):
                return Fraction(v[0], v[1])
            return v

        try:
            base = [(b["name"], [dec(v) for v in b["support"]]) for b in doc["base_vars"]]
            exact = bool(doc.get("exact", True))
            pmf = [Fraction(p[0], p[1]) if isinstance(p, list) else p for p in doc["pmf"]]
            y = {int(k): [dec(v) for v in t] for k, t in doc["y"].items()}
            m = {int(k): [[dec(v) for v in t] for t in ts] for k, ts in doc.get("m", {}).items()}
            g = [[dec(v) for v in t] for t in doc.get("g", [])]
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed model document: {exc}") from None
        return cls(base, pmf, y, m, g, exact=exact)


# -- model builders -----------------------------------------------------------

RADEMACHER = (-1, 1)
HALF = (Fraction(1, 2), Fraction(1, 2))


def example1_model() -> DiscreteModel:
    """Rademacher version of the four-vertex directed counterexample.

    Vertices 0..3 stand for 1..4: ``Y0=e0, Y1=e1, Y2=e0+e2+e3, Y3=e3`` and
    ``M_i = sigma(Y_i)``.
    """
    base = [(f"e{k}", RADEMACHER) for k in range(4)]
    y = {
        0: lambda a: a["e0"],
        1: lambda a: a["e1"],
        2: lambda a: a["e0"] + a["e2"] + a["e3"],
        3: lambda a: a["e3"],
    }
    m = {i: [f] for i, f in y.items()}
    return DiscreteModel.from_functions(base, {b: HALF for b, _ in base}, y, m)


def example1_systems() -> tuple[NeighborhoodSystem, NeighborhoodSystem]:
    """The directed system and its coarser counterpart, 0-based."""
    fine = NeighborhoodSystem.from_mapping(4, {2: (0, 3)})
    coarse = NeighborhoodSystem.from_mapping(4, {0: (2,), 1: (0,), 2: (0, 3), 3: (2,)})
    return fine, coarse


def common_shock_model(
    graph: NeighborhoodSystem,
    p_shock: Fraction = Fraction(1, 2),
    q_edge: tuple[Fraction, Fraction] = (Fraction(1, 2), Fraction(1, 2)),
    idio: Sequence[int] = (),
    q_idio: Fraction = Fraction(1, 2),
) -> DiscreteModel:
    """Binary common-shock model with ``graph`` as conditional dependency graph.

    ``U ~ Bernoulli(p_shock)``; each edge carries ``c_e | U ~ Bernoulli(q_edge[U])``
    independently; vertices in ``idio`` get an extra independent bit.  Then
    ``Y_i = U + sum of c_e over edges at i (+ own bit)`` and ``M_i = G = sigma(U)``.
    """
    if graph.directed:
        raise InputError("a dependency graph must be undirected")
    edges = graph.undirected_edges()
    base = [("U", (0, 1))] + [(f"c{a}_{b}", (0, 1)) for a, b in edges] + [(f"z{i}", (0, 1)) for i in idio]
    p_shock, q_idio = Fraction(p_shock), Fraction(q_idio)
    q_edge = tuple(Fraction(q) for q in q_edge)

    def bern(q, x):
        return q if x else 1 - q

    def weight(a):
        u = a["U"]
        p = bern(p_shock, u)
        for e in edges:
            p *= bern(q_edge[u], a[f"c{e[0]}_{e[1]}"])
        for i in idio:
            p *= bern(q_idio, a[f"z{i}"])
        return p

    at = {i: [f"c{a}_{b}" for a, b in edges if i in (a, b)] for i in range(graph.n)}

    def make_y(i):
        names = at[i] + ([f"z{i}"] if i in idio else [])
        return lambda a: a["U"] + sum(a[k] for k in names)

    y = {i: make_y(i) for i in range(graph.n)}
    shock = lambda a: a["U"]  # noqa: E731
    m = {i: [shock] for i in range(graph.n)}
    return DiscreteModel.from_functions(base, weight, y, m, g=[shock])


def markov_chain_model(n: int, p0: Fraction, transition: Sequence[Sequence[Fraction]]) -> DiscreteModel:
    """Binary Markov chain on a path, ``M_i = sigma(Y_i)``."""
    P = [[Fraction(x) for x in row] for row in transition]
    p0 = Fraction(p0)
    base = [(f"x{k}", (0, 1)) for k in range(n)]

    def weight(a):
        p = p0 if a["x0"] == 1 else 1 - p0
        for k in range(1, n):
            p *= P[a[f"x{k - 1}"]][a[f"x{k}"]]
        return p

    y = {k: (lambda a, k=k: a[f"x{k}"]) for k in range(n)}
    m = {k: [y[k]] for k in range(n)}
    return DiscreteModel.from_functions(base, weight, y, m)


def rademacher_fld_model(
    in_nbrs: NeighborhoodSystem,
    weights: Mapping[tuple[int, int], int] | None = None,
    tau: int = 1,
    m_field: str = "shocks",
) -> DiscreteModel:
    """Functional local dependence with Rademacher base shocks.

    ``Y_i = sum_{j in closure of in-nbrs} w_ij e_j + tau * h_i``.  With
    ``m_field="shocks"`` each ``M_i = sigma(e_i, h_i)``; ``"trivial"`` leaves
    every ``M_i`` trivial.
    """
    n = in_nbrs.n
    base = [(f"e{i}", RADEMACHER) for i in range(n)] + [(f"h{i}", RADEMACHER) for i in range(n)]
    weights = dict(weights or {})

    def w(i, j):
        return weights.get((i, j), 1)

    def make_y(i):
        terms = [(j, w(i, j)) for j in (i,) + tuple(in_nbrs[i])]
        return lambda a: sum(c * a[f"e{j}"] for j, c in terms) + tau * a[f"h{i}"]

    y = {i: make_y(i) for i in range(n)}
    if m_field == "shocks":
        m = {i: [lambda a, i=i: a[f"e{i}"], lambda a, i=i: a[f"h{i}"]] for i in range(n)}
    elif m_field == "trivial":
        m = {}
    else:
        raise InputError(f"unknown m_field {m_field!r}")
    return DiscreteModel.from_functions(base, {b: HALF for b, _ in base}, y, m)
