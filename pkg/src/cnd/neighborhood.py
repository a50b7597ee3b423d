"""Neighborhood systems on a finite index set ``{0, ..., n-1}``.

A neighborhood system maps every vertex ``i`` to a set ``nu(i)`` that never
contains ``i`` itself.  Vertex sets are plain sorted tuples of ints; every
function that accepts a set also accepts any iterable and normalizes it with
:func:`vertex_set`.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .errors import InputError

VertexSet = tuple  # sorted, duplicate-free tuple of ints


def vertex_set(members: Iterable[int], n: int | None = None) -> VertexSet:
    """Normalize ``members`` into a sorted duplicate-free tuple, checking range."""
    out = tuple(sorted({int(v) for v in members}))
    if n is not None and out and (out[0] < 0 or out[-1] >= n):
        bad = [v for v in out if v < 0 or v >= n]
        raise InputError(f"vertices {bad} outside [0, {n})")
    return out


@dataclass(frozen=True)
class NeighborhoodSystem:
    n: int
    neighbors: tuple[VertexSet, ...]

    def __post_init__(self):
        if self.n < 0:
            raise InputError("n must be nonnegative")
        if len(self.neighbors) != self.n:
            raise InputError(f"expected {self.n} neighbor sets, got {len(self.neighbors)}")
        normalized = []
        for i, nb in enumerate(self.neighbors):
            s = vertex_set(nb, self.n)
            if i in s:
                raise InputError(f"vertex {i} lists itself as a neighbor")
            normalized.append(s)
        object.__setattr__(self, "neighbors", tuple(normalized))

    @classmethod
    def from_mapping(cls, n: int, nbrs: Mapping[int, Iterable[int]]) -> "NeighborhoodSystem":
        rows = [()] * n
        for i, nb in nbrs.items():
            i = int(i)
            if not 0 <= i < n:
                raise InputError(f"vertex {i} outside [0, {n})")
            rows[i] = tuple(nb)
        return cls(n, tuple(rows))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], directed: bool = False) -> "NeighborhoodSystem":
        """Arc ``(i, j)`` means ``j in nu(i)``; undirected edges add both arcs."""
        rows: list[set[int]] = [set() for _ in range(n)]
        for i, j in edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise InputError(f"edge ({i}, {j}) outside [0, {n})")
            if i == j:
                raise InputError(f"self-loop at {i}")
            rows[i].add(j)
            if not directed:
                rows[j].add(i)
        return cls(n, tuple(tuple(r) for r in rows))

    @classmethod
    def empty(cls, n: int) -> "NeighborhoodSystem":
        return cls(n, ((),) * n)

    def __getitem__(self, i: int) -> VertexSet:
        return self.neighbors[i]

    def __len__(self) -> int:
        return self.n

    @cached_property
    def directed(self) -> bool:
        sets = [set(nb) for nb in self.neighbors]
        return any(j not in sets[i] for j, nb in enumerate(self.neighbors) for i in nb)

    @cached_property
    def edge_count(self) -> int:
        return sum(len(nb) for nb in self.neighbors)

    def symmetrized(self) -> "NeighborhoodSystem":
        """The undirected system with i ~ j iff i in nu(j) or j in nu(i)."""
        return NeighborhoodSystem.from_edges(self.n, self.arcs(), directed=False)

    def arcs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nb in enumerate(self.neighbors) for j in nb]

    def undirected_edges(self) -> list[tuple[int, int]]:
        """Edges ``i < j`` of the symmetrization."""
        return sorted({(min(i, j), max(i, j)) for i, j in self.arcs()})


def _check(ns: NeighborhoodSystem, A: Iterable[int]) -> VertexSet:
    return vertex_set(A, ns.n)


def closure(ns: NeighborhoodSystem, A: Iterable[int]) -> VertexSet:
    """``A`` together with every neighbor of a vertex in ``A``."""
    A = _check(ns, A)
    out = set(A)
    for i in A:
        out.update(ns.neighbors[i])
    return tuple(sorted(out))


def boundary(ns: NeighborhoodSystem, A: Iterable[int]) -> VertexSet:
    A = _check(ns, A)
    members = set(A)
    return tuple(v for v in closure(ns, A) if v not in members)


def degrees(ns: NeighborhoodSystem, over: Iterable[int] | None = None) -> tuple[int, Fraction]:
    """Maximum and average degree ``(d_mx, d_av)``; ``d_av`` is an exact rational.

    With ``over`` the statistics are taken over that vertex subset only, which
    is how the restricted degrees of a high-degree plan are defined.
    """
    verts = range(ns.n) if over is None else _check(ns, over)
    sizes = [len(ns.neighbors[i]) for i in verts]
    if not sizes:
        return 0, Fraction(0)
    return max(sizes), Fraction(sum(sizes), len(sizes))


class Ordering(str, enum.Enum):
    STRICTLY_FINER = "strictly_finer"
    WEAKLY_FINER = "weakly_finer"
    EQUAL = "equal"
    WEAKLY_COARSER = "weakly_coarser"
    STRICTLY_COARSER = "strictly_coarser"
    INCOMPARABLE = "incomparable"


def compare(ns1: NeighborhoodSystem, ns2: NeighborhoodSystem) -> Ordering:
    """Pointwise inclusion order between two systems on the same index set.

    Equality is reported on its own.  Pointwise inclusion that is not equality
    is always strict, so ``WEAKLY_FINER``/``WEAKLY_COARSER`` are never returned
    by this function; they exist for callers that want the inclusive relation
    (see :func:`weakly_finer`).
    """
    if ns1.n != ns2.n:
        raise InputError(f"systems on different index sets ({ns1.n} vs {ns2.n})")
    sub = all(set(a) <= set(b) for a, b in zip(ns1.neighbors, ns2.neighbors))
    sup = all(set(b) <= set(a) for a, b in zip(ns1.neighbors, ns2.neighbors))
    if sub and sup:
        return Ordering.EQUAL
    if sub:
        return Ordering.STRICTLY_FINER
    if sup:
        return Ordering.STRICTLY_COARSER
    return Ordering.INCOMPARABLE


def weakly_finer(ns1: NeighborhoodSystem, ns2: NeighborhoodSystem) -> bool:
    return compare(ns1, ns2) in (Ordering.EQUAL, Ordering.STRICTLY_FINER)


def restrict(ns: NeighborhoodSystem, Nstar: Iterable[int]) -> NeighborhoodSystem:
    """``nu*(i) = nu(i) & Nstar`` for ``i`` in ``Nstar``; empty for the rest."""
    Nstar = _check(ns, Nstar)
    keep = set(Nstar)
    rows = [()] * ns.n
    for i in Nstar:
        rows[i] = tuple(j for j in ns.neighbors[i] if j in keep)
    return NeighborhoodSystem(ns.n, tuple(rows))


@dataclass(frozen=True)
class FractionalCover:
    classes: tuple[tuple[VertexSet, Fraction], ...]

    @property
    def total_weight(self) -> Fraction:
        return sum((w for _, w in self.classes), Fraction(0))

    def violations(self, ns: NeighborhoodSystem) -> list[str]:
        """Cover invariants that fail for ``ns`` (empty when valid)."""
        out = []
        cover = [Fraction(0)] * ns.n
        for members, w in self.classes:
            if w < 0:
                out.append(f"negative weight on {members}")
            mset = set(members)
            for i in members:
                if set(ns.neighbors[i]) & mset:
                    out.append(f"class {members} not independent at {i}")
                cover[i] += w
        bad = [i for i, c in enumerate(cover) if c != 1]
        if bad:
            out.append(f"vertex weights do not sum to 1 at {bad[:10]}")
        if self.total_weight > degrees(ns)[0] + 1:
            out.append("total weight exceeds d_mx + 1")
        return out

    def check(self, ns: NeighborhoodSystem) -> None:
        problems = self.violations(ns)
        if problems:
            raise InputError("; ".join(problems))


def proper_cover(ns: NeighborhoodSystem) -> FractionalCover:
    """Greedy coloring cover: color classes with unit weights.

    Vertices are colored in descending symmetrized degree (ties by index), so
    at most ``d_mx(sym) + 1`` classes arise.  ``d_mx`` of a directed system can
    be smaller than that of its symmetrization; the bound ``W <= d_mx + 1`` is
    then not guaranteed and :meth:`FractionalCover.check` will say so.
    """
    sym = ns.symmetrized()
    order = sorted(range(ns.n), key=lambda i: (-len(sym.neighbors[i]), i))
    color = [-1] * ns.n
    for i in order:
        used = {color[j] for j in sym.neighbors[i] if color[j] >= 0}
        c = 0
        while c in used:
            c += 1
        color[i] = c
    k = max(color, default=-1) + 1
    classes = tuple((tuple(i for i in range(ns.n) if color[i] == c), Fraction(1)) for c in range(k))
    return FractionalCover(classes)


def separates(ns: NeighborhoodSystem, S: Iterable[int], A: Iterable[int], B: Iterable[int]) -> bool:
    """True iff every path from ``A`` to ``B`` passes through ``S``."""
    if ns.directed:
        raise InputError("separation is defined for undirected systems only")
    S, A, B = _check(ns, S), _check(ns, A), _check(ns, B)
    if set(S) & set(A) or set(S) & set(B) or set(A) & set(B):
        raise InputError("S, A, B must be disjoint")
    blocked = set(S)
    target = set(B)
    seen = set(A)
    queue = deque(A)
    while queue:
        i = queue.popleft()
        for j in ns.neighbors[i]:
            if j in target:
                return False
            if j not in seen and j not in blocked:
                seen.add(j)
                queue.append(j)
    return True


# -- ingestion / export ------------------------------------------------------
#
# Edge list: optional header "# n N", then one "i j" per line.  A line means
# j in nu(i); in undirected mode it also means i in nu(j).  Export writes the
# header and, for undirected systems, each edge once with i < j.


def to_edge_list(ns: NeighborhoodSystem) -> str:
    lines = [f"# n {ns.n}"]
    pairs = ns.arcs() if ns.directed else ns.undirected_edges()
    lines.extend(f"{i} {j}" for i, j in pairs)
    return "\n".join(lines) + "\n"


def from_edge_list(text: str, directed: bool | None = None, n: int | None = None) -> NeighborhoodSystem:
    """Parse the edge-list format.  ``directed=None`` reads every line as one arc."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "n":
                n = int(parts[1])
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"line {lineno}: expected 'i j', got {raw!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
    if directed is None:
        return NeighborhoodSystem.from_edges(n, edges, directed=True)
    return NeighborhoodSystem.from_edges(n, edges, directed=directed)


def to_adjacency_json(ns: NeighborhoodSystem) -> str:
    doc = {"n": ns.n, "nbrs": {str(i): list(nb) for i, nb in enumerate(ns.neighbors)}}
    return json.dumps(doc, separators=(",", ":"))


def from_adjacency_json(text: str | Mapping) -> NeighborhoodSystem:
    doc = json.loads(text) if isinstance(text, str) else text
    try:
        n = int(doc["n"])
        nbrs = {int(k): v for k, v in doc.get("nbrs", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed adjacency document: {exc}") from None
    return NeighborhoodSystem.from_mapping(n, nbrs)


def cycle(n: int) -> NeighborhoodSystem:
    return NeighborhoodSystem.from_edges(n, [(i, (i + 1) % n) for i in range(n)] if n > 2 else
                                         ([(0, 1)] if n == 2 else []))


def star(k: int, n: int | None = None, hub: int = 0) -> NeighborhoodSystem:
    n = k + 1 if n is None else n
    leaves = [v for v in range(n) if v != hub][:k]
    return NeighborhoodSystem.from_edges(n, [(hub, v) for v in leaves])


def path(n: int) -> NeighborhoodSystem:
    return NeighborhoodSystem.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def subsets(vertices: Sequence[int], nonempty: bool = True):
    """All subsets of ``vertices`` as sorted tuples, by bitmask order."""
    verts = tuple(vertices)
    start = 1 if nonempty else 0
    for mask in range(start, 1 << len(verts)):
        yield tuple(v for b, v in enumerate(verts) if mask >> b & 1)
