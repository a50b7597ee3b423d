"""Samplers for CND random fields and the graphs they live on.

Two constructions are provided.  :class:`GaussianFLDModel` builds a
functional-local-dependence field from Gaussian shocks, with ``M_i`` generated
by vertex ``i``'s own shocks; :class:`CommonShockDGModel` builds a field with a
conditional dependency graph given a discrete common shock ``U``.  Both
sample in blocks of replications, each replication on its own counter-based
stream (see :mod:`cnd.rng`).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import InputError
from .neighborhood import NeighborhoodSystem, vertex_set
from .rng import normal_block, replication_rng
from .transforms import Transform

# -- graphs -------------------------------------------------------------------

GRAPH_KINDS = ("ring", "erdos_renyi", "ba_hub", "star", "lattice", "edgeless")


def ring(n: int, k: int = 1) -> NeighborhoodSystem:
    if k < 0 or (k > 0 and 2 * k >= n):
        raise InputError(f"ring({k}) needs 2k < n (n={n})")
    return NeighborhoodSystem.from_edges(n, [(i, (i + d) % n) for i in range(n) for d in range(1, k + 1)])


def gen_graph(kind: str, n: int, seed: int = 0, **params) -> NeighborhoodSystem:
    """Undirected graph families; deterministic given ``seed``.

    ``ring(k)``: k nearest on each side.  ``erdos_renyi(p)``.  ``ba_hub(m)``:
    ``ring(m)`` on vertices ``0..n-2`` plus hub ``n-1`` adjacent to all.
    ``star(k)``: hub 0 with leaves ``1..k``.  ``lattice(d)``: open grid with
    side ``n**(1/d)``.
    """
    if n < 1:
        raise InputError("n must be positive")
    if kind == "ring":
        return ring(n, int(params.get("k", 1)))
    if kind == "edgeless":
        return NeighborhoodSystem.empty(n)
    if kind == "erdos_renyi":
        p = float(params.get("p", 0.0))
        if not 0.0 <= p <= 1.0:
            raise InputError("erdos_renyi needs 0 <= p <= 1")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
        iu, ju = np.triu_indices(n, 1)
        keep = rng.random(iu.size) < p
        return NeighborhoodSystem.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()))
    if kind == "ba_hub":
        m = int(params.get("m", 1))
        if n < 2:
            raise InputError("ba_hub needs n >= 2")
        base = ring(n - 1, m) if m > 0 else NeighborhoodSystem.empty(n - 1)
        edges = base.undirected_edges() + [(i, n - 1) for i in range(n - 1)]
        return NeighborhoodSystem.from_edges(n, edges)
    if kind == "star":
        k = int(params.get("k", n - 1))
        if k < 0 or k + 1 > n:
            raise InputError(f"star({k}) needs n >= k+1 (n={n})")
        return NeighborhoodSystem.from_edges(n, [(0, j) for j in range(1, k + 1)])
    if kind == "lattice":
        d = int(params.get("d", 2))
        side = round(n ** (1.0 / d)) if d > 0 else 0
        if d < 1 or side**d != n:
            raise InputError(f"lattice({d}) needs n to be a perfect {d}-th power (n={n})")
        idx = np.arange(n).reshape((side,) * d)
        edges = []
        for axis in range(d):
            a = np.take(idx, range(side - 1), axis=axis).ravel()
            b = np.take(idx, range(1, side), axis=axis).ravel()
            edges += list(zip(a.tolist(), b.tolist()))
        return NeighborhoodSystem.from_edges(n, edges)
    raise InputError(f"unknown graph kind {kind!r}; choose from {GRAPH_KINDS}")


# -- samples ------------------------------------------------------------------


@dataclass
class FieldSample:
    """One replication; ``latent`` is the Gaussian index before the transform."""

    y: np.ndarray
    base: dict
    seed_path: tuple[int, int]
    latent: np.ndarray | None = None

    def to_csv(self) -> str:
        keys = sorted(self.base)
        buf = io.StringIO()
        buf.write(",".join(["i", "y"] + keys) + "\n")
        for i in range(len(self.y)):
            row = [str(i), repr(float(self.y[i]))]
            for k in keys:
                v = np.asarray(self.base[k])
                row.append(repr(float(v[i] if v.ndim else v)))
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


@dataclass
class FieldBlock:
    """Replications ``start .. stop-1`` stacked along axis 0."""

    start: int
    stop: int
    y: np.ndarray
    base: dict
    latent: np.ndarray | None = None

    def sample(self, k: int, seed: int) -> FieldSample:
        lat = None if self.latent is None else self.latent[k]
        return FieldSample(self.y[k], {key: v[k] for key, v in self.base.items()}, (seed, self.start + k), lat)


# -- functional local dependence ----------------------------------------------


@dataclass(frozen=True)
class GaussianFLDModel:
    """``L_i = sum_{j in closure of in-nbrs(i)} w_ij eps_j + tau eta_i`` and ``Y_i = transform(L_i)``.

    ``in_nbrs`` plays the role of the neighborhood system ``nu`` and
    ``M_i = sigma(eps_i, eta_i)``.  Conditional means are computed for
    transforms acting on the latent index.
    """

    in_nbrs: NeighborhoodSystem
    weights: sparse.csr_matrix
    tau: float = 1.0
    transform: Transform = field(default_factory=lambda: Transform("identity"))

    def __post_init__(self):
        n = self.in_nbrs.n
        W = sparse.csr_matrix(self.weights, dtype=float)
        if W.shape != (n, n):
            raise InputError(f"weights must be {n}x{n}")
        W.eliminate_zeros()
        W.sort_indices()
        if not self.tau > 0:
            raise InputError("tau must be positive")
        for i in range(n):
            allowed = set(self.in_nbrs[i]) | {i}
            cols = W.indices[W.indptr[i]:W.indptr[i + 1]]
            if not set(cols.tolist()) <= allowed:
                raise InputError(f"weights of vertex {i} fall outside its closed in-neighborhood")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "transform", Transform.parse(self.transform))

    @classmethod
    def build(
        cls,
        in_nbrs: NeighborhoodSystem,
        w_self: float = 1.0,
        w_nbr: float = 1.0,
        tau: float = 1.0,
        transform="identity",
        column_weights: Mapping[int, float] | None = None,
        overrides: Sequence[tuple[int, int, float]] = (),
    ) -> "GaussianFLDModel":
        """Uniform weights, then per-source ``column_weights``, then per-entry overrides."""
        rows, cols, vals = [], [], []
        column_weights = {int(k): float(v) for k, v in (column_weights or {}).items()}
        over = {(int(i), int(j)): float(w) for i, j, w in overrides}
        for i in range(in_nbrs.n):
            for j in (i,) + tuple(in_nbrs[i]):
                w = w_self if j == i else column_weights.get(j, w_nbr)
                w = over.get((i, j), w)
                rows.append(i)
                cols.append(j)
                vals.append(w)
        for i, j in over:
            if j != i and j not in in_nbrs[i]:
                raise InputError(f"override ({i},{j}) is not an in-neighbor entry")
        n = in_nbrs.n
        W = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(in_nbrs, W, float(tau), Transform.parse(transform))

    @property
    def n(self) -> int:
        return self.in_nbrs.n

    @property
    def w_diag(self) -> np.ndarray:
        return self.weights.diagonal()

    @property
    def own_sd(self) -> np.ndarray:
        """Conditional sd of ``L_i`` given the in-neighbors' shocks."""
        return np.sqrt(self.w_diag**2 + self.tau**2)

    @property
    def latent_var(self) -> np.ndarray:
        return np.asarray(self.weights.multiply(self.weights).sum(axis=1)).ravel() + self.tau**2

    def sample_block(self, seed: int, start: int, stop: int) -> FieldBlock:
        z = normal_block(seed, start, stop, (2, self.n))
        eps, eta = z[:, 0, :], z[:, 1, :]
        latent = eps @ self.weights.T.toarray() if self.n <= 64 else (self.weights @ eps.T).T
        latent = latent + self.tau * eta
        return FieldBlock(start, stop, self.transform(latent), {"eps": eps, "eta": eta}, latent)

    def conditioning_masks(self, Nstar: Sequence[int] | None = None) -> sparse.csr_matrix:
        """0/1 pattern of which ``eps_j`` each vertex's centering is given.

        Plain centering conditions on the in-neighbors.  With ``Nstar``,
        vertex ``i`` in ``Nstar`` conditions on its in-neighbors inside
        ``Nstar`` plus every vertex outside it; only shocks in the closed
        in-neighborhood matter, so this coincides with the plain pattern and
        the starred and plain centerings agree for this model.
        """
        inside = set(range(self.n)) if Nstar is None else set(vertex_set(Nstar, self.n))
        outside = set(range(self.n)) - inside
        rows, cols = [], []
        for i in range(self.n):
            nbrs = set(self.in_nbrs[i])
            given = ((nbrs & inside) | outside) - {i} if i in inside else nbrs
            for j in sorted(given & nbrs):
                rows.append(i)
                cols.append(j)
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def conditional_moments(self, eps: np.ndarray, mask: sparse.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
        """Mean and sd of ``L_i`` given ``eps_j`` for ``j`` in row ``i`` of ``mask``."""
        Wc = self.weights.multiply(mask).tocsr()
        mean = (Wc @ eps.T).T
        free = self.weights.multiply(self.weights) - Wc.multiply(Wc)
        var = np.asarray(free.sum(axis=1)).ravel() + self.tau**2
        return mean, np.sqrt(np.maximum(var, 0.0))


def sample_fld(model: GaussianFLDModel, seed: int, rep: int = 0) -> FieldSample:
    return model.sample_block(seed, rep, rep + 1).sample(0, seed)


def centered_block(model: GaussianFLDModel, block: FieldBlock, h: Transform | None = None,
                   mask: sparse.csr_matrix | None = None) -> np.ndarray:
    """``h(L_i) - E[h(L_i) | M_nu(i)]`` for every replication and vertex."""
    h = model.transform if h is None else Transform.parse(h)
    if mask is None:
        mask = model.conditioning_masks()
    mean, sd = model.conditional_moments(block.base["eps"], mask)
    return h(block.latent) - h.smooth(mean, sd)


def centered_summand(model: GaussianFLDModel, sample: FieldSample, i: int, h: Transform | None = None) -> float:
    h = model.transform if h is None else Transform.parse(h)
    row = model.weights.getrow(i)
    eps = sample.base["eps"]
    off = [(j, w) for j, w in zip(row.indices.tolist(), row.data.tolist()) if j != i]
    mean = sum(w * eps[j] for j, w in off)
    return float(h(sample.latent[i]) - h.smooth(mean, model.own_sd[i]))


# -- common-shock dependency graph --------------------------------------------


@dataclass(frozen=True)
class CommonShockDGModel:
    """``Y_i = loc[u] + scale[u] * (edge_weight * sum_{e at i} c_e + idio_sd * e_i)`` given ``U = u``.

    ``U`` takes values ``0..K-1`` with probabilities ``shock_probs``; the
    cluster shocks ``c_e`` (one per edge) and ``e_i`` are standard normal, so
    ``dep_graph`` is a conditional dependency graph given ``sigma(U)``.
    """

    dep_graph: NeighborhoodSystem
    shock_probs: tuple[float, ...] = (1.0,)
    loc: tuple[float, ...] = (0.0,)
    scale: tuple[float, ...] = (1.0,)
    edge_weight: float = 1.0
    idio_sd: float = 1.0

    def __post_init__(self):
        if self.dep_graph.directed:
            raise InputError("a dependency graph must be undirected")
        p = np.asarray(self.shock_probs, dtype=float)
        K = p.size
        if K == 0 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise InputError("shock_probs must be a pmf")
        if len(self.loc) != K or len(self.scale) != K:
            raise InputError("loc and scale need one entry per shock value")
        edges = self.dep_graph.undirected_edges()
        inc = np.zeros((len(edges), self.dep_graph.n))
        for k, (a, b) in enumerate(edges):
            inc[k, a] = inc[k, b] = 1.0
        object.__setattr__(self, "_incidence", sparse.csr_matrix(inc))

    @property
    def n(self) -> int:
        return self.dep_graph.n

    @property
    def n_cells(self) -> int:
        return len(self.shock_probs)

    def cell_sigma2(self) -> np.ndarray:
        """Var(sum_i Y_i | U = u) for each cell."""
        m = len(self.dep_graph.undirected_edges())
        core = 4.0 * self.edge_weight**2 * m + self.n * self.idio_sd**2
        return np.asarray(self.scale, dtype=float) ** 2 * core

    def sample_block(self, seed: int, start: int, stop: int) -> FieldBlock:
        n, m = self.n, self._incidence.shape[0]
        cum = np.cumsum(self.shock_probs)
        u = np.empty(stop - start, dtype=np.int64)
        c = np.empty((stop - start, m))
        e = np.empty((stop - start, n))
        for k, rep in enumerate(range(start, stop)):
            g = replication_rng(seed, rep)
            u[k] = min(int(np.searchsorted(cum, g.random(), side="right")), len(cum) - 1)
            c[k] = g.standard_normal(m)
            e[k] = g.standard_normal(n)
        core = self.edge_weight * (self._incidence.T @ c.T).T + self.idio_sd * e
        loc = np.asarray(self.loc)[u][:, None]
        sc = np.asarray(self.scale)[u][:, None]
        y = loc + sc * core
        return FieldBlock(start, stop, y, {"U": u, "c": c, "e": e})

    def centered(self, block: FieldBlock) -> np.ndarray:
        """``Y_i - E[Y_i | U]``."""
        return block.y - np.asarray(self.loc)[block.base["U"]][:, None]


def sample_dg(model: CommonShockDGModel, seed: int, rep: int = 0) -> FieldSample:
    blk = model.sample_block(seed, rep, rep + 1)
    return FieldSample(blk.y[0], {"U": blk.base["U"][0], "e": blk.base["e"][0]}, (seed, rep))
