"""Empirical-process statistics over function classes of transforms.

Class members are :class:`~cnd.transforms.Transform` objects acting on the
latent index of a Gaussian FLD field (or on ``Y`` of a common-shock field).
Per-vertex marginals are finite normal mixtures, so seminorms, brackets and
pairwise distances are computed in closed form.
"""

from __future__ import annotations

import heapq
import io
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma, gammaincc, ndtr
from scipy.optimize import brentq

from .errors import InputError
from .generators import CommonShockDGModel, GaussianFLDModel
from .neighborhood import NeighborhoodSystem, vertex_set
from .rng import map_blocks
from .transforms import Transform, constant, hermite_nodes, indicator

MIN_KS_SAMPLES = 100

# -- marginals ----------------------------------------------------------------


@dataclass(frozen=True)
class Marginals:
    """Vertex ``i`` is a mixture of ``N(means[k, i], sds[k, i]**2)`` with weights ``probs[k]``."""

    probs: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    @property
    def n(self) -> int:
        return self.means.shape[1]

    def cdf(self, t: float) -> float:
        """Vertex-averaged marginal CDF."""
        if t == math.inf:
            return 1.0
        if t == -math.inf:
            return 0.0
        z = ndtr((t - self.means) / self.sds)
        return float((self.probs[:, None] * z).sum(axis=0).mean())

    def quantile(self, q: float) -> float:
        if q <= 0:
            return -math.inf
        if q >= 1:
            return math.inf
        lo = float((self.means - 40 * self.sds).min())
        hi = float((self.means + 40 * self.sds).max())
        return brentq(lambda t: self.cdf(t) - q, lo, hi, xtol=1e-14, rtol=1e-14)

    def mean_sq(self, h: Transform) -> float:
        """``(1/n) sum_i E h(Y_i)^2``."""
        vals = h.smooth_sq(self.means, self.sds)
        return float((self.probs[:, None] * vals).sum(axis=0).mean())

    def mean_sq_diff(self, h1: Transform, h2: Transform, order: int = 64) -> float:
        """``(1/n) sum_i E (h1 - h2)(Y_i)^2`` by Gauss-Hermite quadrature."""
        t, w = hermite_nodes(order)
        pts = self.means[..., None] + self.sds[..., None] * t
        d = (h1(pts) - h2(pts)) ** 2 @ w
        return float((self.probs[:, None] * d).sum(axis=0).mean())

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draws from the vertex-averaged marginal."""
        i = rng.integers(0, self.n, size)
        k = rng.choice(len(self.probs), size=size, p=self.probs)
        return self.means[k, i] + self.sds[k, i] * rng.standard_normal(size)


def marginals(model) -> Marginals:
    if isinstance(model, GaussianFLDModel):
        sd = np.sqrt(model.latent_var)
        return Marginals(np.ones(1), np.zeros((1, model.n)), sd[None, :])
    if isinstance(model, CommonShockDGModel):
        deg = np.array([len(model.dep_graph[i]) for i in range(model.n)], dtype=float)
        core = np.sqrt(model.edge_weight**2 * deg + model.idio_sd**2)
        means = np.repeat(np.asarray(model.loc, dtype=float)[:, None], model.n, axis=1)
        sds = np.asarray(model.scale, dtype=float)[:, None] * core[None, :]
        return Marginals(np.asarray(model.shock_probs, dtype=float), means, sds)
    if isinstance(model, Marginals):
        return model
    raise InputError(f"no marginal law for {type(model).__name__}")


# -- function classes ---------------------------------------------------------


@dataclass(frozen=True)
class FunctionClass:
    kind: str
    members: tuple[Transform, ...]
    envelope: Transform
    thresholds: tuple[float, ...] = ()

    @classmethod
    def indicator_grid(cls, thresholds: Sequence[float], scale: float = 1.0) -> "FunctionClass":
        T = tuple(sorted(float(t) for t in thresholds))
        if not T:
            raise InputError("an indicator grid needs at least one threshold")
        if not scale > 0:
            raise InputError("indicator grid scale must be positive")
        return cls("indicator_grid", tuple(indicator(t, scale) for t in T), constant(scale), T)

    @classmethod
    def finite_list(cls, members: Sequence, envelope: Transform | None = None) -> "FunctionClass":
        hs = tuple(Transform.parse(h) for h in members)
        if not hs:
            raise InputError("a finite class needs at least one member")
        if envelope is None:
            b = max(h.bound for h in hs)
            if not math.isfinite(b):
                raise InputError("unbounded members need an explicit envelope")
            envelope = constant(b)
        return cls("finite_list", hs, envelope)

    def __len__(self) -> int:
        return len(self.members)

    def subclass(self, idx: Sequence[int]) -> "FunctionClass":
        idx = sorted(set(idx))
        if self.kind == "indicator_grid":
            return FunctionClass(self.kind, tuple(self.members[i] for i in idx), self.envelope,
                                 tuple(self.thresholds[i] for i in idx))
        return FunctionClass(self.kind, tuple(self.members[i] for i in idx), self.envelope)

    def envelope_violations(self, points: np.ndarray) -> int:
        H = self.envelope(points)
        return int(sum(int((np.abs(h(points)) > H + 1e-12).sum()) for h in self.members))


def rho_bar(h: Transform, model) -> float:
    """``sqrt((1/n) sum_i E h(Y_i)^2)`` in closed form."""
    return math.sqrt(max(marginals(model).mean_sq(Transform.parse(h)), 0.0))


def rho_bar_mc(h: Transform, values: np.ndarray) -> tuple[float, float]:
    """Monte Carlo ``rho_bar`` from a (reps, n) array of field values, with a delta-method se."""
    sq = np.asarray(Transform.parse(h)(values)) ** 2
    per_rep = sq.mean(axis=1)
    m = float(per_rep.mean())
    se = float(per_rep.std(ddof=1) / math.sqrt(per_rep.size)) if per_rep.size > 1 else 0.0
    val = math.sqrt(max(m, 0.0))
    return val, (se / (2 * val) if val > 0 else 0.0)


@dataclass
class Bracketing:
    epsilon: float
    brackets: list[tuple[Transform, Transform]]
    count: int
    widths: list[float]
    assignment: list[int]
    upper: bool = True

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "count": self.count,
            "kind": "upper" if self.upper else "exact",
            "widths": self.widths,
            "brackets": [[lo.to_dict(), hi.to_dict()] for lo, hi in self.brackets],
        }


def _bracket_index(F: np.ndarray, eps2: float) -> np.ndarray:
    """Cell ``k`` covers vertex-averaged mass ``((k-1) eps^2, k eps^2]``."""
    return np.maximum(np.ceil(F / eps2 - 1e-12), 1).astype(np.int64)


def bracketing_number(fclass: FunctionClass, model, epsilon: float) -> Bracketing:
    """Constructive epsilon-brackets (an upper bound on the bracketing number).

    Indicator grids are cut at quantiles of the vertex-averaged marginal so
    each cell has mass ``<= epsilon**2``; a member ``1{y <= t}`` with ``t`` in
    cell ``(c_{k-1}, c_k]`` lies in ``[1{y <= c_{k-1}}, 1{y <= c_k}]``.  When
    ``epsilon >= rho_bar(H)`` a single bracket ``[0, H]`` suffices.
    """
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    marg = marginals(model)
    if fclass.kind == "finite_list":
        return Bracketing(epsilon, [(h, h) for h in fclass.members], len(fclass), [0.0] * len(fclass),
                          list(range(len(fclass))))
    if fclass.kind != "indicator_grid":
        raise InputError(f"unsupported class kind {fclass.kind!r}")
    scale = fclass.envelope.param
    H = math.sqrt(marg.mean_sq(fclass.envelope))
    zero = indicator(-math.inf, scale)
    if epsilon >= H:
        return Bracketing(epsilon, [(zero, indicator(math.inf, scale))], 1, [H], [0] * len(fclass))
    eps2 = (epsilon / scale) ** 2
    F = np.array([marg.cdf(t) for t in fclass.thresholds])
    cells = _bracket_index(F, eps2)
    uniq = sorted(set(cells.tolist()))
    brackets, widths = [], []
    for k in uniq:
        lo_q, hi_q = (k - 1) * eps2, k * eps2
        lo = marg.quantile(lo_q)
        hi = marg.quantile(hi_q)
        brackets.append((indicator(lo, scale), indicator(hi, scale)))
        widths.append(scale * math.sqrt(max(marg.cdf(hi) - marg.cdf(lo), 0.0)))
    pos = {k: r for r, k in enumerate(uniq)}
    return Bracketing(epsilon, brackets, len(uniq), widths, [pos[k] for k in cells.tolist()])


def bracketing_count(fclass: FunctionClass, model, epsilon: float) -> int:
    """Count only (no quantile solves), identical to ``bracketing_number(...).count``."""
    if fclass.kind == "finite_list":
        return len(fclass)
    return _count_fn(fclass, marginals(model))(epsilon)


def _count_fn(fclass: FunctionClass, marg: Marginals) -> Callable[[float], int]:
    if fclass.kind == "finite_list":
        m = len(fclass)
        return lambda eps: m
    scale = fclass.envelope.param
    H = math.sqrt(marg.mean_sq(fclass.envelope))
    F = np.array([marg.cdf(t) for t in fclass.thresholds])

    def count(eps: float) -> int:
        if eps >= H:
            return 1
        return int(np.unique(_bracket_index(F, (eps / scale) ** 2)).size)

    return count


@dataclass
class EntropyResult:
    value: float
    main: float
    sliver: float
    upper_limit: float
    eps_min: float
    error_bound: float
    evaluations: int
    divergent: bool = False
    warnings: list[str] = field(default_factory=list)

    def __float__(self) -> float:
        return self.value


def entropy_integral_counts(
    count: Callable[[float], float],
    upper: float,
    grid: int = 64,
    cutoff: float = 2.0**-16,
    tol: float = 1e-5,
    max_evals: int = 200_000,
) -> EntropyResult:
    """``int_0^upper sqrt(1 + log N(eps)) d eps`` for a nonincreasing count ``N``.

    Starts from a trapezoid on a ``grid``-point log-spaced grid over
    ``[upper * cutoff, upper]`` and refines the cells whose monotone error
    bracket ``(f(a) - f(b)) (b - a)`` is largest until the total is at most
    ``tol * upper``.  The sliver below ``eps_min`` uses the extension
    ``N(eps) <= N(eps_min) (eps_min/eps)^2``, which integrates in closed form.
    """
    if upper < 0:
        raise InputError("upper limit must be nonnegative")
    if upper == 0:
        return EntropyResult(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    eps_min = upper * cutoff

    def f(e):
        N = count(e)
        if N < 1:
            raise InputError(f"bracketing number {N} < 1 at eps={e}")
        return math.sqrt(1.0 + math.log(N))

    xs = np.geomspace(eps_min, upper, grid)
    fs = [f(float(x)) for x in xs]
    evals = grid
    heap = []
    total_err = 0.0
    for a, b, fa, fb in zip(xs[:-1], xs[1:], fs[:-1], fs[1:]):
        err = (fa - fb) * (b - a)
        total_err += err
        heapq.heappush(heap, (-err, float(a), float(b), fa, fb))
    while heap and total_err > tol * upper and evals < max_evals:
        neg, a, b, fa, fb = heapq.heappop(heap)
        total_err += neg
        m = math.sqrt(a * b) if b / a > 1.0 + 1e-9 else 0.5 * (a + b)
        fm = f(m)
        evals += 1
        for lo, hi, flo, fhi in ((a, m, fa, fm), (m, b, fm, fb)):
            err = (flo - fhi) * (hi - lo)
            total_err += err
            heapq.heappush(heap, (-err, lo, hi, flo, fhi))
    main = sum(0.5 * (fa + fb) * (b - a) for _, a, b, fa, fb in heap)
    a0 = 1.0 + math.log(count(eps_min))
    sliver = eps_min * math.sqrt(2.0) * math.exp(a0 / 2.0) * gammaincc(1.5, a0 / 2.0) * gamma(1.5)
    sliver = float(sliver)
    res = EntropyResult(float(main + sliver), float(main), sliver, upper, eps_min, float(0.5 * total_err), evals)
    if not math.isfinite(sliver) or sliver > 0.1 * res.value:
        res.divergent = True
        res.warnings.append("sliver below eps_min exceeds 10% of the integral; cutoff too coarse")
    if total_err > tol * upper:
        res.warnings.append(f"refinement stopped at {evals} evaluations with error bound {0.5 * total_err:.3g}")
    return res


def entropy_integral(fclass: FunctionClass, model, **kw) -> EntropyResult:
    marg = marginals(model)
    H = math.sqrt(max(marg.mean_sq(fclass.envelope), 0.0))
    return entropy_integral_counts(_count_fn(fclass, marg), H, **kw)


# -- empirical process runs ---------------------------------------------------


@dataclass
class EmpiricalRun:
    members: tuple[Transform, ...]
    gn: np.ndarray
    cells: np.ndarray | None = None
    gn_star: np.ndarray | None = None
    Rn_star: np.ndarray | None = None
    rho_n_star: np.ndarray | None = None
    Nstar: tuple | None = None

    @property
    def reps(self) -> int:
        return self.gn.shape[0]

    @property
    def sup_abs(self) -> np.ndarray:
        return np.abs(self.gn).max(axis=1)

    def decomposition_error(self) -> float:
        if self.gn_star is None:
            return 0.0
        return float(np.abs(self.gn - (self.gn_star + self.Rn_star + self.rho_n_star)).max())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("replication,member,gn,gn_star,Rn_star,rho_n_star\n")
        has = self.gn_star is not None
        for r in range(self.reps):
            for k, h in enumerate(self.members):
                extra = (repr(float(self.gn_star[r, k])), repr(float(self.Rn_star[r, k])),
                         repr(float(self.rho_n_star[r, k]))) if has else ("", "", "")
                buf.write(f"{r},{h.label},{float(self.gn[r, k])!r},{','.join(extra)}\n")
        return buf.getvalue()


def _fld_run_block(model: GaussianFLDModel, members, Nstar, seed, start, stop):
    blk = model.sample_block(seed, start, stop)
    eps = blk.base["eps"]
    mean, sd = model.conditional_moments(eps, model.conditioning_masks())
    root = math.sqrt(model.n)
    out = {"gn": np.empty((stop - start, len(members)))}
    if Nstar is not None:
        inside = np.zeros(model.n, dtype=bool)
        inside[list(Nstar)] = True
        mean_s, sd_s = model.conditional_moments(eps, model.conditioning_masks(Nstar))
        for key in ("gn_star", "Rn_star", "rho_n_star"):
            out[key] = np.empty_like(out["gn"])
        out["cells"] = eps[:, ~inside]
    for k, h in enumerate(members):
        hv = h(blk.latent)
        cm = h.smooth(mean, sd)
        out["gn"][:, k] = (hv - cm).sum(axis=1) / root
        if Nstar is not None:
            cs = h.smooth(mean_s, sd_s)
            out["gn_star"][:, k] = (hv - cs)[:, inside].sum(axis=1) / root
            out["Rn_star"][:, k] = (hv - cm)[:, ~inside].sum(axis=1) / root
            out["rho_n_star"][:, k] = (cm - cs)[:, inside].sum(axis=1) / root
    return out


def _dg_run_block(model: CommonShockDGModel, members, Nstar, seed, start, stop):
    blk = model.sample_block(seed, start, stop)
    marg = marginals(model)
    U = blk.base["U"]
    mean, sd = marg.means[U], marg.sds[U]
    root = math.sqrt(model.n)
    out = {"gn": np.empty((stop - start, len(members))), "cells": U[:, None].astype(float)}
    if Nstar is not None:
        inside = np.zeros(model.n, dtype=bool)
        inside[list(Nstar)] = True
        for key in ("gn_star", "Rn_star", "rho_n_star"):
            out[key] = np.empty_like(out["gn"])
    for k, h in enumerate(members):
        X = h(blk.y) - h.smooth(mean, sd)
        out["gn"][:, k] = X.sum(axis=1) / root
        if Nstar is not None:
            # M_i = G = sigma(U) for every i, so starred and plain centerings coincide
            out["gn_star"][:, k] = X[:, inside].sum(axis=1) / root
            out["Rn_star"][:, k] = X[:, ~inside].sum(axis=1) / root
            out["rho_n_star"][:, k] = 0.0
    return out


def run_empirical(
    model,
    ns: NeighborhoodSystem | None,
    fclass: FunctionClass | Sequence,
    reps: int,
    seed: int,
    Nstar: Sequence[int] | None = None,
    workers: int = 1,
) -> EmpiricalRun:
    """``G_n(h)`` per replication and member, plus the high-degree decomposition when ``Nstar`` is given."""
    members = fclass.members if isinstance(fclass, FunctionClass) else tuple(Transform.parse(h) for h in fclass)
    star = None if Nstar is None else vertex_set(Nstar, model.n)
    if isinstance(model, GaussianFLDModel):
        if ns is not None and ns != model.in_nbrs:
            raise InputError("for an FLD model the neighborhood system is its in-neighbor system")
        fn = partial(_fld_run_block, model, members, star, seed)
    elif isinstance(model, CommonShockDGModel):
        fn = partial(_dg_run_block, model, members, star, seed)
    else:
        raise InputError(f"no closed-form centering for {type(model).__name__}")
    parts = map_blocks(fn, reps, workers)

    def cat(key):
        return np.concatenate([p[key] for p in parts]) if key in parts[0] else None

    return EmpiricalRun(members, cat("gn"), cat("cells"), cat("gn_star"), cat("Rn_star"), cat("rho_n_star"), star)


# -- distribution distances ---------------------------------------------------


def ks_distance(samples, reference) -> float:
    """Two-sided sup distance between the empirical CDF and ``reference``.

    ``reference`` is a vectorised CDF or a second sample (two-sample sup).
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = x.size
    if m < MIN_KS_SAMPLES:
        raise InputError(f"ks_distance needs at least {MIN_KS_SAMPLES} samples, got {m}")
    if callable(reference):
        F = np.asarray(reference(x), dtype=float)
        i = np.arange(1, m + 1)
        return float(max((i / m - F).max(), (F - (i - 1) / m).max()))
    y = np.sort(np.asarray(reference, dtype=float).ravel())
    grid = np.concatenate([x, y])
    Fx = np.searchsorted(x, grid, side="right") / m
    Fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.abs(Fx - Fy).max())


def normal_cdf(x):
    return ndtr(x)


@dataclass
class StableReport:
    cells: list
    cell_counts: list[int]
    cell_ks: list[float]
    factorization_error: float
    unconditional_ks: float
    flagged: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cells": [str(c) for c in self.cells],
            "cell_counts": self.cell_counts,
            "cell_ks": self.cell_ks,
            "factorization_error": self.factorization_error,
            "unconditional_ks": self.unconditional_ks,
            "flagged": self.flagged,
        }


def stable_joint_stats(S: np.ndarray, U: np.ndarray, t_grid: Sequence[float], cells: Sequence | None = None) -> StableReport:
    """Per-cell KS of ``S / sigma_hat(cell)``, joint factorization error and the unconditional KS.

    Mean zero is assumed (the sums are centered), so ``sigma_hat`` is the root
    mean square within a cell.
    """
    S = np.asarray(S, dtype=float)
    U = np.asarray(U)
    cells = sorted(set(U.tolist())) if cells is None else list(cells)
    t_grid = np.asarray(t_grid, dtype=float)
    Z = np.empty_like(S)
    ks, counts, flagged = [], [], []
    for u in cells:
        sel = U == u
        c = int(sel.sum())
        counts.append(c)
        if c == 0:
            flagged.append(f"cell {u} has no replications")
            ks.append(math.nan)
            continue
        sig = math.sqrt(float((S[sel] ** 2).mean()))
        Z[sel] = S[sel] / sig if sig > 0 else 0.0
        ks.append(ks_distance(Z[sel], normal_cdf) if c >= MIN_KS_SAMPLES else math.nan)
        if c < MIN_KS_SAMPLES:
            flagged.append(f"cell {u} has only {c} replications")
    fact = 0.0
    for u in cells:
        sel = U == u
        if not sel.any():
            continue
        pu = sel.mean()
        joint = (Z[sel][None, :] <= t_grid[:, None]).sum(axis=1) / S.size
        fact = max(fact, float(np.abs(joint - ndtr(t_grid) * pu).max()))
    sig_all = math.sqrt(float((S**2).mean()))
    unc = ks_distance(S / sig_all, normal_cdf) if sig_all > 0 else 1.0
    return StableReport(cells, counts, ks, fact, unc, flagged)


def stable_joint_test(model: CommonShockDGModel, ns, reps: int, seed: int, t_grid: Sequence[float],
                      workers: int = 1) -> StableReport:
    run = run_empirical(model, ns, [Transform("identity")], reps, seed, workers=workers)
    S = run.gn[:, 0]
    U = run.cells[:, 0].astype(np.int64)
    return stable_joint_stats(S, U, t_grid, cells=list(range(model.n_cells)))


def class_distances(fclass: FunctionClass, model) -> np.ndarray:
    """Matrix of ``rho_bar(h_a - h_b)`` over class members."""
    marg = marginals(model)
    m = len(fclass)
    D = np.zeros((m, m))
    if fclass.kind == "indicator_grid":
        F = np.array([marg.cdf(t) for t in fclass.thresholds])
        scale = fclass.envelope.param
        D = scale * np.sqrt(np.abs(F[:, None] - F[None, :]))
        return D
    for a in range(m):
        for b in range(a + 1, m):
            D[a, b] = D[b, a] = math.sqrt(max(marg.mean_sq_diff(fclass.members[a], fclass.members[b]), 0.0))
    return D


def equicontinuity_modulus(run: EmpiricalRun, distances: np.ndarray, delta_grid: Sequence[float]) -> list[tuple[float, float]]:
    """Mean over replications of ``sup |G(h_a) - G(h_b)|`` over pairs with distance ``<= delta``."""
    m = run.gn.shape[1]
    ia, ib = np.triu_indices(m, 1)
    if ia.size == 0:
        return [(float(d), 0.0) for d in delta_grid]
    dist = distances[ia, ib]
    order = np.argsort(dist, kind="stable")
    dist = dist[order]
    diffs = np.abs(run.gn[:, ia[order]] - run.gn[:, ib[order]])
    cummax = np.maximum.accumulate(diffs, axis=1)
    means = cummax.mean(axis=0)
    out = []
    for d in delta_grid:
        k = int(np.searchsorted(dist, d, side="right"))
        out.append((float(d), float(means[k - 1]) if k > 0 else 0.0))
    return out


def cov_kernel(run: EmpiricalRun, a: int, b: int, cells: np.ndarray | None = None) -> list[dict]:
    """Cross-moment ``E[G(h_a) G(h_b) | cell]`` with standard errors."""
    prod = run.gn[:, a] * run.gn[:, b]
    if cells is None:
        cells = np.zeros(run.reps, dtype=np.int64)
    out = []
    for u in sorted(set(np.asarray(cells).tolist())):
        sel = np.asarray(cells) == u
        x = prod[sel]
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
        out.append({"cell": u, "value": float(x.mean()), "se": se, "count": int(x.size)})
    return out
