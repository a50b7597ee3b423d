"""Closed-form bound evaluators and Monte Carlo moment estimation.

Evaluators take the constituent quantities directly and return either a
float or a :class:`BoundReport` carrying every term.  The absolute constant
``C`` is never fixed by the theory, so it is always an argument (default 1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import partial
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import InputError
from .generators import CommonShockDGModel, GaussianFLDModel, centered_block
from .neighborhood import NeighborhoodSystem, degrees, restrict, vertex_set
from .rng import map_blocks, stream_rng
from .transforms import Transform, hermite_nodes

MIN_REPS = 1000
NUMBER = (int, float, Fraction)


@dataclass
class BoundReport:
    value: float
    terms: dict
    valid: bool
    C: float
    name: str = ""
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"name": self.name, "value": self.value, "C": self.C, "valid": self.valid}
        out.update(self.terms)
        if not self.valid and "hypothesis violated" not in self.warnings:
            self.warnings.append("hypothesis violated")
        out["warnings"] = list(self.warnings)
        return out


@dataclass
class MomentEstimates:
    sigma2: float
    mu: dict
    V_n: float
    r_n2: float
    cell: str = "all"
    sigma2_se: float = 0.0
    mu_se: dict = field(default_factory=dict)
    V_n_se: float = 0.0
    r_n2_se: float = 0.0
    reps: int = 0
    degenerate: bool = False
    xi_method: str = "none"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mu"] = {str(k): v for k, v in self.mu.items()}
        d["mu_se"] = {str(k): v for k, v in self.mu_se.items()}
        return d


# -- Berry-Esseen type bounds -------------------------------------------------


def _check_C(C: float) -> float:
    if not C > 0:
        raise InputError("C must be positive")
    return float(C)


def be_terms(a: float, b: float, C: float = 1.0) -> tuple[float, bool]:
    """``C (sqrt(a) - log(a) sqrt(b))`` and whether ``a <= 1``; ``a > 0`` required."""
    if not a > 0:
        raise InputError(f"a = {a} must be positive")
    if b < 0:
        raise InputError("b must be nonnegative")
    return C * (math.sqrt(a) - math.log(a) * math.sqrt(b)), a <= 1


def _clip(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def _be_report(name, a, b, r_n2, C, extra=None) -> BoundReport:
    raw, valid = be_terms(a, b, C)
    terms = {"a": a, "b": b, "r_n2": r_n2, "third_term": 0.0, "raw": raw}
    terms.update(extra or {})
    return BoundReport(_clip(raw), terms, valid, C, name)


def _degenerate(name, C, r_n2) -> BoundReport:
    terms = {"a": 0.0, "b": r_n2, "r_n2": r_n2, "third_term": 0.0, "raw": math.nan, "degenerate": True}
    return BoundReport(1.0, terms, False, C, name, ["degenerate input: d_mx = 0 (no neighbors), bound uninformative"])


def _mu(m, p: int) -> float:
    if isinstance(m, MomentEstimates):
        return float(m.mu[p])
    return float(m[p])


def berry_esseen(m: MomentEstimates, n: int, d_mx: int, d_av, C: float = 1.0, r_n2: float | None = None) -> BoundReport:
    C = _check_C(C)
    d_av = float(d_av)
    r_n2 = float(m.r_n2 if r_n2 is None else r_n2)
    if d_mx == 0:
        return _degenerate("berry_esseen", C, r_n2)
    a = n * d_mx * d_av * _mu(m, 3) ** 3
    b = n * d_mx**2 * d_av * _mu(m, 4) ** 4 + r_n2
    return _be_report("berry_esseen", a, b, r_n2, C)


def berry_esseen_condA(m: MomentEstimates, n: int, d_mx: int, d_av, C: float = 1.0) -> BoundReport:
    rep = berry_esseen(m, n, d_mx, d_av, C, r_n2=0.0)
    rep.name = "berry_esseen_condA"
    return rep


def r_n2_bound(m, n: int, d_mx: int, d_av) -> float:
    """``8 n d_mx^2 d_av mu_4^4``; valid when the M_i are conditionally independent given G."""
    mu4 = _mu(m, 4) if not isinstance(m, NUMBER) else float(m)
    return 8.0 * n * d_mx**2 * float(d_av) * mu4**4


def tail_bound(d_mx: int, V_n: float, M: float, eta: float, variant: str = "cnd") -> float:
    """Bernstein-type bound on ``P(|sum X_i| >= eta | G)``, clipped at 1."""
    if not eta > 0 or not M > 0:
        raise InputError("eta and M must be positive")
    if V_n < 0:
        raise InputError("V_n must be nonnegative")
    k = d_mx + 1
    if variant == "cnd":
        expo = eta**2 / (2.0 * k * (2.0 * k * V_n + M * eta / 3.0))
    elif variant == "condA":
        expo = 8.0 * eta**2 / (25.0 * k * (V_n + M * eta / 3.0))
    else:
        raise InputError(f"unknown tail-bound variant {variant!r}")
    return min(1.0, 2.0 * math.exp(-expo))


def finite_max_bound(d_mx: int, n: int, J: float, m: int, maxV: float, C: float = 1.0) -> float:
    if m < 0 or not J > 0 or n < 1:
        raise InputError("need m >= 0, J > 0, n >= 1")
    L = math.log1p(m)
    return C * (d_mx + 1) * (J * L / math.sqrt(n) + math.sqrt(L * maxV))


def bracketing_bound(d_mx: int, entropy_integral: float, C: float = 1.0) -> float:
    if entropy_integral < 0:
        raise InputError("entropy integral must be nonnegative")
    return C * (1 + d_mx) * entropy_integral


def high_degree_bracketing_bound(n: int, n_star: int, d_mx_star: int, entropy_integral: float, C: float = 1.0) -> float:
    if entropy_integral < 0:
        raise InputError("entropy integral must be nonnegative")
    return C * math.sqrt(n_star) * (1 + d_mx_star) / math.sqrt(n) * entropy_integral


def smoothing_bound(p_x_dev: float, sup_f: float, moment_r: float, r: float) -> float:
    if not r > 0 or min(p_x_dev, sup_f, moment_r) < 0:
        raise InputError("need r > 0 and nonnegative inputs")
    return p_x_dev + 3.0 * (sup_f**r * moment_r) ** (1.0 / (r + 1.0))


@dataclass
class HighDegreePlan:
    Nstar: tuple
    n: int
    n_star: int
    d_mx_star: int
    d_av_star: Fraction | float
    mu_star: dict
    mu_tilde_star: dict
    rho_star: float
    r: int = 4
    r_n_star2: float = 0.0
    sigma2_star: float = 1.0

    def __post_init__(self):
        if not self.Nstar or self.n_star < 1:
            raise InputError("Nstar must be nonempty")
        if not 1 <= self.r <= 4:
            raise InputError("moment order r must lie in [1, 4]")

    def as_moments(self) -> MomentEstimates:
        return MomentEstimates(self.sigma2_star, dict(self.mu_star), 0.0, self.r_n_star2, cell="star")


def high_degree_bound(plan: HighDegreePlan, C: float = 1.0) -> BoundReport:
    C = _check_C(C)
    base = berry_esseen(plan.as_moments(), plan.n_star, plan.d_mx_star, plan.d_av_star, C)
    r = plan.r
    mu_t = float(plan.mu_tilde_star.get(r, 0.0)) if plan.n > plan.n_star else 0.0
    inner = (plan.n - plan.n_star) * mu_t + plan.rho_star
    third = C * inner ** (r / (r + 1.0)) if inner > 0 else 0.0
    terms = dict(base.terms)
    terms["third_term"] = third
    terms["n_star"] = plan.n_star
    terms["r"] = r
    if terms.get("degenerate"):
        return BoundReport(1.0, terms, False, C, "high_degree", list(base.warnings))
    raw = terms["raw"] + third
    terms["raw"] = raw
    return BoundReport(_clip(raw), terms, base.valid, C, "high_degree", list(base.warnings))


# -- moment estimation --------------------------------------------------------


def _power_moments(X: np.ndarray) -> np.ndarray:
    """Per-vertex sums over replications of ``|X|^p``, ``p = 1..4``, shape (4, n)."""
    A = np.abs(X)
    return np.stack([(A**p).sum(axis=0) for p in (1, 2, 3, 4)])


def _mu_from_sums(sums: np.ndarray, sums_sq: np.ndarray, count: int, sigma: float) -> tuple[dict, dict]:
    mu, se = {}, {}
    for k, p in enumerate((1, 2, 3, 4)):
        mean = sums[k] / count
        var = np.maximum(sums_sq[k] / count - mean**2, 0.0)
        i = int(np.argmax(mean))
        val = mean[i] ** (1.0 / p)
        mu[p] = float(val / sigma) if sigma > 0 else 0.0
        if sigma > 0 and mean[i] > 0:
            se[p] = float(val / (p * mean[i]) * math.sqrt(var[i] / count) / sigma)
        else:
            se[p] = 0.0
    return mu, se


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


@dataclass(frozen=True)
class _Pair:
    i: int
    j: int
    mult: int
    ci: np.ndarray
    wi: np.ndarray
    cj: np.ndarray
    wj: np.ndarray
    w_ii: float
    w_jj: float
    b_ij: float
    b_ji: float
    s_i: float
    s_j: float
    mean_F: float


def _inner_F(h: Transform, tau: float, pr: _Pair, a_i: np.ndarray, a_j: np.ndarray, order: int) -> np.ndarray:
    """``E[X_i X_j | conditioning shocks]`` given their partial sums ``a_i``, ``a_j``."""
    t, w = hermite_nodes(order)
    x = t[None, :, None]
    y = t[None, None, :]
    ai = a_i[:, None, None]
    aj = a_j[:, None, None]
    gi = h.smooth(ai + pr.w_ii * x + pr.b_ij * y, tau) - h.smooth(ai + pr.b_ij * y, pr.s_i)
    gj = h.smooth(aj + pr.w_jj * y + pr.b_ji * x, tau) - h.smooth(aj + pr.b_ji * x, pr.s_j)
    return np.einsum("bxy,x,y->b", gi * gj, w, w)


def _fld_pairs(model: GaussianFLDModel, h: Transform, order: int, members: set | None) -> list[_Pair]:
    W = model.weights.tolil()
    ns = model.in_nbrs
    pairs: dict = {}
    for i in range(model.n):
        for j in ns[i]:
            if members is not None and (i not in members or j not in members):
                continue
            key = (min(i, j), max(i, j))
            pairs[key] = pairs.get(key, 0) + 1
    out = []
    cache: dict = {}
    t, wt = hermite_nodes(order)
    for (i, j), mult in sorted(pairs.items()):
        ci = [k for k in ns[i] if k != j]
        cj = [k for k in ns[j] if k != i]
        wi = np.array([W[i, k] for k in ci])
        wj = np.array([W[j, k] for k in cj])
        shared = sorted(set(ci) & set(cj))
        vi = float((wi**2).sum())
        vj = float((wj**2).sum())
        cov = float(sum(W[i, k] * W[j, k] for k in shared))
        pr = _Pair(i, j, mult, np.array(ci, dtype=np.int64), wi, np.array(cj, dtype=np.int64), wj,
                   W[i, i], W[j, j], W[i, j], W[j, i], model.own_sd[i], model.own_sd[j], 0.0)
        sig = (round(vi, 14), round(vj, 14), round(cov, 14), pr.w_ii, pr.w_jj, pr.b_ij, pr.b_ji, pr.s_i, pr.s_j)
        if sig not in cache:
            # outer expectation over the Gaussian pair (a_i, a_j)
            S = np.array([[vi, cov], [cov, vj]])
            L = np.linalg.cholesky(S + 1e-300 * np.eye(2)) if vi > 0 and vj > 0 and vi * vj - cov**2 > 1e-14 else None
            Z1, Z2 = np.meshgrid(t, t, indexing="ij")
            if L is None:
                # singular: a_j is a multiple of a_i or one of them vanishes
                ai = math.sqrt(vi) * Z1.ravel()
                aj = (cov / math.sqrt(vi) * Z1.ravel()) if vi > 0 else math.sqrt(vj) * Z2.ravel()
            else:
                ai = L[0, 0] * Z1.ravel()
                aj = L[1, 0] * Z1.ravel() + L[1, 1] * Z2.ravel()
            F = _inner_F(h, model.tau, pr, ai, aj, order)
            cache[sig] = float(F @ np.outer(wt, wt).ravel())
        out.append(_replace_mean(pr, cache[sig]))
    return out


def _replace_mean(pr: _Pair, val: float) -> _Pair:
    d = pr.__dict__.copy()
    d["mean_F"] = val
    return _Pair(**d)


def _diag_xi_mean(model: GaussianFLDModel, h: Transform, order: int) -> np.ndarray:
    """E[Var(h(L_i) | in-nbr shocks)] per vertex."""
    t, w = hermite_nodes(order)
    W = model.weights
    off = W - sparse.diags(W.diagonal())
    v = np.sqrt(np.asarray(off.multiply(off).sum(axis=1)).ravel())
    vals = h.cond_var(v[:, None] * t[None, :], model.own_sd[:, None])
    return vals @ w


def _fld_block(model, h, pairs, diag_mean, xi_method, inner, order, members, seed, start, stop):
    block = model.sample_block(seed, start, stop)
    mask = model.conditioning_masks()
    X = centered_block(model, block, h, mask)
    idx = np.arange(model.n) if members is None else np.array(sorted(members))
    Xs = X[:, idx]
    mean, sd = model.conditional_moments(block.base["eps"], mask)
    cv = h.cond_var(mean, sd)
    R = (cv[:, idx] - diag_mean[idx]).sum(axis=1)
    eps = block.base["eps"]
    for pr in pairs:
        a_i = eps[:, pr.ci] @ pr.wi if pr.ci.size else np.zeros(len(eps))
        a_j = eps[:, pr.cj] @ pr.wj if pr.cj.size else np.zeros(len(eps))
        if xi_method == "quadrature":
            F = _inner_F(h, model.tau, pr, a_i, a_j, order)
        else:
            F = _nested_F(model, h, pr, a_i, a_j, inner, seed, start)
        R = R + pr.mult * (F - pr.mean_F)
    return {
        "S": Xs.sum(axis=1),
        "V": cv[:, idx].sum(axis=1),
        "R": R,
        "pm": _power_moments(Xs),
        "pm2": np.stack([(np.abs(Xs) ** (2 * p)).sum(axis=0) for p in (1, 2, 3, 4)]),
    }


def _nested_F(model, h, pr, a_i, a_j, inner, seed, start):
    """Nested Monte Carlo estimate of E[X_i X_j | conditioning shocks]."""
    out = np.empty(len(a_i))
    tau = model.tau
    for k in range(len(a_i)):
        x, y, ei, ej = stream_rng(seed, start + k, 1, pr.i, pr.j).standard_normal((4, inner))
        Li = a_i[k] + pr.w_ii * x + pr.b_ij * y + tau * ei
        Lj = a_j[k] + pr.w_jj * y + pr.b_ji * x + tau * ej
        Xi = h(Li) - h.smooth(a_i[k] + pr.b_ij * y, pr.s_i)
        Xj = h(Lj) - h.smooth(a_j[k] + pr.b_ji * x, pr.s_j)
        out[k] = float(np.mean(Xi * Xj))
    return out


def estimate_moments(
    model,
    ns: NeighborhoodSystem | None = None,
    h=None,
    reps: int = 2000,
    seed: int = 0,
    workers: int = 1,
    xi_method: str = "quadrature",
    inner: int = 1000,
    order: int = 32,
    Nstar: Sequence[int] | None = None,
) -> list[MomentEstimates]:
    """Monte Carlo estimates of sigma_n^2, mu_p, V_n and r_n^2, one entry per G-cell.

    For :class:`GaussianFLDModel` the summands are ``h(L_i)`` centered given
    the in-neighbors' shocks, ``G`` is trivial and ``xi_ij`` comes from
    Gauss-Hermite quadrature (``xi_method="quadrature"``) or nested Monte
    Carlo with ``inner`` draws.  For :class:`CommonShockDGModel` the summands
    are ``Y_i - E[Y_i|U]``, cells are the values of ``U`` and ``xi_ij = 0``
    because every ``M_i`` equals ``sigma(U)``.  ``Nstar`` restricts all sums
    to those vertices (the starred quantities of the high-degree theorem).
    """
    if reps < MIN_REPS:
        raise InputError(f"reps = {reps} is below the minimum of {MIN_REPS}")
    members = None if Nstar is None else set(vertex_set(Nstar, model.n))
    if isinstance(model, GaussianFLDModel):
        if ns is not None and ns != model.in_nbrs:
            raise InputError("for an FLD model the neighborhood system is its in-neighbor system")
        if xi_method not in ("quadrature", "nested_mc"):
            raise InputError(f"unknown xi_method {xi_method!r}")
        h = model.transform if h is None else Transform.parse(h)
        pairs = _fld_pairs(model, h, order, members)
        diag = _diag_xi_mean(model, h, order)
        fn = partial(_fld_block, model, h, pairs, diag, xi_method, inner, order, members, seed)
        parts = map_blocks(fn, reps, workers)
        S = np.concatenate([p["S"] for p in parts])
        V = np.concatenate([p["V"] for p in parts])
        R = np.concatenate([p["R"] for p in parts])
        pm = sum(p["pm"] for p in parts)
        pm2 = sum(p["pm2"] for p in parts)
        return [_summarize(S, V, R, pm, pm2, reps, "all", xi_method)]
    if isinstance(model, CommonShockDGModel):
        fn = partial(_dg_block, model, members, seed)
        parts = map_blocks(fn, reps, workers)
        U = np.concatenate([p["U"] for p in parts])
        S = np.concatenate([p["S"] for p in parts])
        V = np.concatenate([p["V"] for p in parts])
        out = []
        for u in range(model.n_cells):
            sel = U == u
            cnt = int(sel.sum())
            if cnt == 0:
                out.append(MomentEstimates(0.0, {p: 0.0 for p in (1, 2, 3, 4)}, 0.0, 0.0, cell=str(u),
                                           degenerate=True, xi_method="exact-zero"))
                continue
            pm = sum(p["pm"][u] for p in parts)
            pm2 = sum(p["pm2"][u] for p in parts)
            out.append(_summarize(S[sel], V[sel], np.zeros(cnt), pm, pm2, cnt, str(u), "exact-zero"))
        return out
    raise InputError(f"cannot estimate moments for {type(model).__name__}")


def _dg_block(model: CommonShockDGModel, members, seed, start, stop):
    block = model.sample_block(seed, start, stop)
    X = model.centered(block)
    if members is not None:
        X = X[:, sorted(members)]
    U = block.base["U"]
    deg = np.array([len(model.dep_graph[i]) for i in range(model.n)], dtype=float)
    if members is not None:
        deg = deg[sorted(members)]
    var_i = (model.edge_weight**2 * deg + model.idio_sd**2).sum()
    scale = np.asarray(model.scale)[U]
    pm = np.stack([_power_moments(X[U == u]) for u in range(model.n_cells)])
    pm2 = np.stack([np.stack([(np.abs(X[U == u]) ** (2 * p)).sum(axis=0) for p in (1, 2, 3, 4)])
                    for u in range(model.n_cells)])
    return {"U": U, "S": X.sum(axis=1), "V": scale**2 * var_i, "pm": pm, "pm2": pm2}


def _summarize(S, V, R, pm, pm2, count, cell, xi_method) -> MomentEstimates:
    S2 = S**2
    sigma2 = float(S2.mean())
    degenerate = sigma2 <= 0.0
    sigma = math.sqrt(sigma2) if not degenerate else 0.0
    mu, mu_se = _mu_from_sums(pm, pm2, count, sigma)
    if degenerate:
        r2, r2_se = 0.0, 0.0
    else:
        r2 = float((R**2).mean()) / sigma2**2
        r2_se = _se(R**2) / sigma2**2
    return MomentEstimates(
        sigma2=sigma2, mu=mu, V_n=float(V.mean()), r_n2=r2, cell=cell, sigma2_se=_se(S2), mu_se=mu_se,
        V_n_se=_se(V), r_n2_se=r2_se, reps=int(count), degenerate=degenerate, xi_method=xi_method,
    )


def plan_from_moments(
    ns: NeighborhoodSystem,
    Nstar: Sequence[int],
    star: MomentEstimates,
    mu_tilde: dict | None = None,
    rho_star: float = 0.0,
    r: int = 4,
) -> HighDegreePlan:
    """Assemble a plan from starred moment estimates and the restricted degrees.

    ``mu_tilde`` holds the outside-vertex moments already normalised by the
    starred sigma (see :func:`rescale_mu`).
    """
    Nstar = vertex_set(Nstar, ns.n)
    d_mx, d_av = degrees(restrict(ns, Nstar), over=Nstar)
    return HighDegreePlan(Nstar, ns.n, len(Nstar), d_mx, d_av, dict(star.mu), dict(mu_tilde or {}), rho_star, r,
                          star.r_n2, star.sigma2)


def rescale_mu(est: MomentEstimates, sigma2: float) -> dict:
    """Re-normalise an estimate's ``mu_p`` from its own sigma to ``sqrt(sigma2)``."""
    if sigma2 <= 0:
        return {p: 0.0 for p in est.mu}
    return {p: v * math.sqrt(est.sigma2 / sigma2) for p, v in est.mu.items()}
