"""Normal-mixture approximation of the posterior in the small-lambda regime.

The approximation mixes ``N(bhat_S, Gamma_S^-1)`` over a neighborhood of
supports around a reference vector, with weights

    w_S  proportional to  pi(s) / C(p, s) * (lam/2)^s * (2 pi)^(s/2) * |Gamma_S|^(-1/2) * exp(||P_S y||^2 / 2).

Equivalently each component is the posterior of model ``S`` under a flat
prior on ``b_S``; :func:`flat_prior_log_weights` evaluates that form from an
SVD, independently of the factorization used here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg
from scipy.special import logsumexp

from .core import Model, SparseCoef, as_design, as_generator
from .errors import ComplexityRefused, DomainError, EmptyMixture, RankError
from .exact import (ENUM_BUDGET, LOG_2PI, ModelPosterior, ModelStats, _gauss_part, _model, _y,
                    map_model, model_stats)
from .priors import DimensionPrior, LaplaceSlab, log_binom

DEFAULT_M = 4.0


@dataclass
class SparsityNeighborhood:
    reference: SparseCoef
    A4: float
    M: float
    members: list
    dim_cap: int
    tail_bound: float


def neighborhood_cap(ref_size: int, A4: float) -> int:
    return int(math.floor((2.0 + 4.0 / A4) * ref_size + 1e-12))


def tail_bound(ref_size: int, M: float, p: int, x_norm: float) -> float:
    return M * ref_size * math.sqrt(math.log(p)) / x_norm if p > 1 else 0.0


def in_neighborhood(S, ref: SparseCoef, cap: int, bound: float) -> bool:
    m = _model(S)
    if m.s > cap:
        return False
    dense = ref.to_dense()
    mask = np.ones(ref.p, dtype=bool)
    mask[list(m.indices)] = False
    return float(np.abs(dense[mask]).sum()) <= bound * (1.0 + 1e-12)


def build_neighborhood(ref: SparseCoef, X, A4: float, M: float = DEFAULT_M,
                       budget: int = ENUM_BUDGET) -> SparsityNeighborhood:
    """All supports of size ``<= floor((2 + 4/A4) |S_ref|)`` whose complement
    carries ``l1`` mass of ``ref`` at most ``M |S_ref| sqrt(log p) / ||X||``."""
    X = as_design(X)
    if ref.p != X.p:
        raise DomainError(f"reference has p={ref.p}, design has p={X.p}")
    cap = min(neighborhood_cap(ref.s, A4), X.p)
    bound = tail_bound(ref.s, M, X.p, X.x_norm)
    need = sum(math.comb(X.p, k) for k in range(cap + 1))
    if need > budget:
        raise ComplexityRefused(f"neighborhood has {need} candidate supports (budget {budget})",
                                needed=need, budget=budget)
    dense = np.abs(ref.to_dense())
    total = float(dense.sum())
    members = []
    for k in range(cap + 1):
        for idx in itertools.combinations(range(X.p), k):
            if total - float(dense[list(idx)].sum()) <= bound * (1.0 + 1e-12):
                members.append(Model(idx))
    return SparsityNeighborhood(ref, float(A4), float(M), members, cap, bound)


def plug_in_reference(mp: ModelPosterior) -> SparseCoef:
    """Least-squares fit on the posterior mode, for use when the truth is unknown."""
    m = map_model(mp)
    st = mp.stats[mp.index_of(m)]
    vals = st.beta_hat.copy()
    vals[vals == 0.0] = np.finfo(float).tiny
    return SparseCoef(m, vals, mp.p)


@dataclass
class BvmMixture:
    members: list
    log_w: np.ndarray
    stats: list
    lam: float
    p: int
    excluded: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    def weight_of(self, S) -> float:
        m = _model(S)
        for mm, lw in zip(self.members, self.log_w):
            if mm == m:
                return float(math.exp(lw))
        return 0.0

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "p": self.p,
                "components": [{"support": list(m.indices), "log_weight": float(lw),
                                "center": st.beta_hat.tolist()}
                               for m, lw, st in zip(self.members, self.log_w, self.stats)],
                "excluded": [{"support": list(m.indices), "reason": r} for m, r in self.excluded]}


def _log_prior_factor(dp: DimensionPrior, p: int, s: int, lam: float) -> float:
    return float(dp.log_weights[s] - log_binom(p, s) + s * math.log(lam / 2.0))


def bvm_weights(X, y, dp: DimensionPrior, lam: float, nb) -> BvmMixture:
    """Mixture weights over the members of ``nb`` (a neighborhood or a list of supports)."""
    X = as_design(X)
    members = nb.members if isinstance(nb, SparsityNeighborhood) else [_model(S) for S in nb]
    kept, stats, lw, excluded = [], [], [], []
    for m in members:
        try:
            st = model_stats(X, y, m)
        except RankError as exc:
            excluded.append((m, str(exc)))
            continue
        kept.append(m)
        stats.append(st)
        lw.append(_log_prior_factor(dp, X.p, m.s, lam) + _gauss_part(st))
    if not kept:
        raise EmptyMixture("no full-rank member in the neighborhood")
    lw = np.array(lw)
    return BvmMixture(kept, lw - logsumexp(lw), stats, float(lam), X.p, excluded)


def flat_prior_log_weights(X, y, dp: DimensionPrior, lam: float, members) -> np.ndarray:
    """Normalized weights from ``(lam/2)^s * int exp(-||y - X_S b||^2 / 2) db`` via the SVD."""
    X = as_design(X)
    y = _y(y)
    out = []
    for S in members:
        m = _model(S)
        if m.s == 0:
            log_int = -0.5 * float(y @ y)
        else:
            U, d, _ = np.linalg.svd(X.columns(m.indices), full_matrices=False)
            z = U.T @ y
            log_int = (-0.5 * (float(y @ y) - float(z @ z)) + 0.5 * m.s * LOG_2PI
                       - float(np.log(d).sum()))
        out.append(_log_prior_factor(dp, X.p, m.s, lam) + log_int)
    out = np.array(out)
    return out - logsumexp(out)


def bvm_sample_array(mix: BvmMixture, rng, n_draws: int) -> np.ndarray:
    gen = as_generator(rng)
    w = mix.weights
    comp = gen.choice(len(mix.members), size=n_draws, p=w / w.sum())
    out = np.zeros((n_draws, mix.p))
    for k in np.unique(comp):
        rows = np.flatnonzero(comp == k)
        st = mix.stats[k]
        if st.s == 0:
            continue
        z = gen.standard_normal((rows.size, st.s))
        B = st.beta_hat + linalg.solve_triangular(st.chol, z.T, lower=True, trans="T").T
        out[np.ix_(rows, list(st.model.indices))] = B
    return out


def bvm_sample(mix: BvmMixture, rng, n_draws: int) -> list:
    return [SparseCoef.from_dense(r) for r in bvm_sample_array(mix, rng, n_draws)]


def collapsed_normal(X, y, S0):
    """Center and precision of the single normal on the support ``S0``."""
    st = model_stats(as_design(X), y, S0)
    return st.beta_hat, st.precision


# ---------------------------------------------------------------------------
# total-variation bound
# ---------------------------------------------------------------------------

@dataclass
class TVConfig:
    mc_draws: int = 20_000
    min_weight: float = 1e-8
    quad_max_s: int = 2
    seed: int = 0


@dataclass
class TVBound:
    value: float
    se: float
    weight_part: float
    within_part: float


def _log_tilt(st: ModelStats, slab, B):
    if isinstance(slab, LaplaceSlab):
        return -slab.lam * np.abs(B).sum(axis=-1)
    return slab.log_density(B).sum(axis=-1)


def within_model_tv(st: ModelStats, slab, method: str = "auto", mc_draws: int = 20_000,
                    rng=None):
    """TV between ``N(bhat, Gamma^-1)`` tilted by the slab and the untilted normal.

    Returns ``(tv, se)``; quadrature for one or two coordinates, otherwise
    Monte Carlo of ``E|h/E h - 1| / 2`` under the normal.
    """
    s = st.s
    if s == 0:
        return 0.0, 0.0
    if method == "auto":
        method = "quadrature" if s <= 2 else "mc"
    m = st.beta_hat
    if method == "quadrature":
        if s > 2:
            raise DomainError("within-model TV quadrature is limited to two coordinates")
        P = st.precision
        sd = np.sqrt(np.diag(st.covariance))
        log_c = -0.5 * (s * LOG_2PI - st.logdet)
        shift = float(_log_tilt(st, slab, m[None, :])[0])

        def tilt(B):
            return np.exp(_log_tilt(st, slab, B) - shift)

        def dens(B):
            d = B - m
            return np.exp(log_c - 0.5 * np.einsum("ni,ij,nj->n", d, P, d))

        lo, hi = m - 12 * sd, m + 12 * sd
        inside = (lo < 0) & (hi > 0)
        pts = [np.where(inside, 0.0, m)]
        Z = integrate.cubature(lambda B: dens(B) * tilt(B), lo, hi, rtol=1e-11, atol=0,
                               points=pts).estimate
        res = integrate.cubature(lambda B: dens(B) * np.abs(tilt(B) / Z - 1.0), lo, hi,
                                 rtol=1e-8, atol=1e-12, points=pts, max_subdivisions=20_000)
        return 0.5 * float(res.estimate), 0.0
    gen = as_generator(rng if rng is not None else
                       np.random.default_rng([0x7F, s, *st.model.indices]))
    z = gen.standard_normal((mc_draws, s))
    B = m + linalg.solve_triangular(st.chol, z.T, lower=True, trans="T").T
    lt = _log_tilt(st, slab, B)
    h = np.exp(lt - lt.max())
    ratio = h / h.mean()
    a = np.abs(ratio - 1.0)
    return 0.5 * float(a.mean()), 0.5 * float(a.std(ddof=1)) / math.sqrt(mc_draws)


def tv_upper_bound(exact: ModelPosterior, mix: BvmMixture, cfg: TVConfig | None = None) -> TVBound:
    """Coupling bound ``sum|w - w_hat|/2 + sum min(w, w_hat) TV_S`` on the distance
    between the exact posterior and the mixture.

    Supports present in only one of the two contribute their whole weight
    through the first term. ``TV_S`` is replaced by 1 for supports whose
    shared weight is below ``cfg.min_weight``.
    """
    cfg = cfg or TVConfig()
    w = dict(zip(exact.models, exact.weights))
    st_exact = dict(zip(exact.models, exact.stats))
    what = dict(zip(mix.members, mix.weights))
    keys = sorted(set(w) | set(what))
    weight_part = 0.5 * sum(abs(w.get(k, 0.0) - what.get(k, 0.0)) for k in keys)
    within, var = 0.0, 0.0
    for k in keys:
        shared = min(w.get(k, 0.0), what.get(k, 0.0))
        if shared <= 0.0:
            continue
        if shared < cfg.min_weight:
            within += shared
            continue
        tv, se = within_model_tv(st_exact[k], exact.slab, "auto", cfg.mc_draws,
                                 np.random.default_rng([cfg.seed, k.s, *k.indices]))
        within += shared * tv
        var += (shared * se) ** 2
    return TVBound(weight_part + within, math.sqrt(var), weight_part, within)
