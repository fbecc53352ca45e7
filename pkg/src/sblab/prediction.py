"""Prediction without design conditions.

Two routes:

* the usual prior on ``(S, beta)``, whose prediction rate is governed by
  ``C_pi`` and by ``D(beta0)``, the prior-mass penalty of the true support plus
  the KL cost of shifting the slab to ``beta0``;
* an improper prior on the mean vector itself: pick a dimension ``t`` with
  probability proportional to ``p^(-d t)``, pick one of the distinct column
  spans of that dimension uniformly, and put Lebesgue measure on it.

Distinct spans are found by enumerating supports up to a size cap, keeping
the full-rank ones (a rank-deficient support spans the same space as one of
its subsets) and merging spans whose projections agree to ``dedup_tol`` in
operator norm.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .core import as_design, as_generator
from .errors import ComplexityRefused, DomainError, EmptyFamily, IntegralError
from .exact import LOG_2PI, _y
from .priors import DimensionPrior, HeavyTailedSlab, log_binom

DEDUP_TOL = 1e-8
RANK_TOL = 1e-10
SUBSPACE_BUDGET = 2_000_000


# ---------------------------------------------------------------------------
# prior constants
# ---------------------------------------------------------------------------

def log_c_pi(dp: DimensionPrior) -> float:
    """``log sum_s 9^s C(p, s)^(1/2) pi(s)^(1/2)``."""
    s = np.arange(dp.p + 1)
    terms = s * math.log(9.0) + 0.5 * log_binom(dp.p, s) + 0.5 * dp.log_weights
    return float(logsumexp(terms))


def c_pi(dp: DimensionPrior) -> float:
    lc = log_c_pi(dp)
    return math.exp(lc) if lc < 709.0 else math.inf


def slab_shift_kl(slab, t: float) -> float:
    """``KL(G(. - t), G)`` for a one-dimensional slab, by quadrature."""
    if t == 0.0:
        return 0.0

    def f(u):
        a = slab.log_density(u)
        return math.exp(a) * (a - slab.log_density(u + t))

    scale = 1.0 / slab.lam
    lo, hi = min(-t, 0.0) - scale, max(-t, 0.0) + scale
    total = 0.0
    for a, b, pts in ((-np.inf, lo, None), (lo, hi, sorted({0.0, -t})), (hi, np.inf, None)):
        if pts is None:
            val, err = integrate.quad(f, a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
        else:
            val, err = integrate.quad(f, a, b, points=pts, epsabs=1e-12, epsrel=1e-10, limit=200)
        if not np.isfinite(val):
            raise IntegralError("divergent KL integral")
        total += val
    return total


def log_D(beta0, slab, X, dp: DimensionPrior) -> float:
    """``log C(p, s0) - log pi(s0) + KL(G_S0(. - beta0), G_S0) + E_G ||X_S0 b||^2 / 2``.

    The expectation is ``Var_G * trace(X_S0' X_S0) / 2`` since slab
    coordinates are i.i.d. and centered.
    """
    X = as_design(X)
    s0 = beta0.s
    idx = list(beta0.model.indices)
    kl = sum(slab_shift_kl(slab, float(b)) for b in beta0.values)
    quad = 0.5 * slab.variance * float(np.trace(X.gram_block(idx))) if s0 else 0.0
    return float(log_binom(X.p, s0)) - float(dp.log_weights[s0]) + kl + quad


def rho_n(beta, X, slab: HeavyTailedSlab) -> float:
    """``max(|S| log p, sum_i log(1 + ||X||^mu |beta_i|^mu))``."""
    X = as_design(X)
    first = beta.s * math.log(X.p)
    second = float(np.log1p((X.x_norm * np.abs(beta.values)) ** slab.mu).sum())
    return max(first, second)


def oracle_radius(log_cpi: float, logD: float, r: float, bias: float = 0.0) -> float:
    """``7 bias + 4 sqrt(log(C_pi^2 D)) + 8 sqrt(r)``, the prediction-error radius."""
    inner = 2.0 * log_cpi + logD
    return 7.0 * bias + 4.0 * math.sqrt(max(inner, 0.0)) + 8.0 * math.sqrt(r)


# ---------------------------------------------------------------------------
# subspace family
# ---------------------------------------------------------------------------

@dataclass
class SubspaceFamily:
    """Distinct column spans of dimension ``<= t_max``.

    ``supports[i, :dims[i]]`` is the representative support (lexicographically
    first among supports with that span); row ``0`` is the zero subspace.
    """

    X: object
    supports: np.ndarray
    dims: np.ndarray
    t_max: int
    dedup_tol: float
    merged: int = 0

    def __len__(self):
        return self.dims.shape[0]

    def support(self, i: int) -> tuple:
        return tuple(int(j) for j in self.supports[i, : self.dims[i]])

    def basis(self, i: int) -> np.ndarray:
        return _basis(self.X.entries[:, list(self.support(i))])

    def counts(self) -> np.ndarray:
        return np.bincount(self.dims, minlength=self.t_max + 1)


def _basis(A: np.ndarray) -> np.ndarray:
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], 0))
    U, _, _ = np.linalg.svd(A, full_matrices=False)
    return U


def _batched_bases(X, idx: np.ndarray):
    """Orthonormal bases and smallest singular values for a batch of supports."""
    A = X.entries[:, idx].transpose(1, 0, 2)
    U, sv, _ = np.linalg.svd(A, full_matrices=False)
    return U, sv[:, -1]


def projection_distance(U1: np.ndarray, U2: np.ndarray) -> float:
    """Operator norm of ``P1 - P2`` for equal-dimension orthonormal bases,
    the sine of the largest principal angle, ``||(I - P1) U2||``."""
    R = U2 - U1 @ (U1.T @ U2)
    return float(np.linalg.norm(R, 2)) if R.size else 0.0


def _chunks(p, k, size=20_000):
    it = itertools.combinations(range(p), k)
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield np.array(block, dtype=int).reshape(len(block), k)


def enumerate_subspaces(X, t_max: int, dedup_tol: float = DEDUP_TOL,
                        budget: int = SUBSPACE_BUDGET) -> SubspaceFamily:
    X = as_design(X)
    t_max = min(t_max, X.p, X.n)
    need = sum(math.comb(X.p, k) for k in range(t_max + 1))
    if need > budget:
        raise ComplexityRefused(f"{need} supports exceed the subspace budget {budget}",
                                needed=need, budget=budget)
    rank_tol = RANK_TOL * X.x_norm
    probe = np.random.default_rng(0x5EED).standard_normal((X.n, 2))
    probe /= np.linalg.norm(probe, axis=0)
    sup_rows = [np.full(t_max, -1)]
    dims = [0]
    merged = 0
    for k in range(1, t_max + 1):
        cands, keys = [], []
        for idx in _chunks(X.p, k):
            U, smin = _batched_bases(X, idx)
            full = smin > rank_tol
            if not np.any(full):
                continue
            Uf = U[full]
            proj = np.einsum("bnk,nq->bkq", Uf, probe)
            cands.append(idx[full])
            keys.append((proj ** 2).sum(axis=1))
        if not cands:
            continue
        cand = np.concatenate(cands)
        key = np.concatenate(keys)
        keep = _dedup(X, cand, key, dedup_tol)
        merged += cand.shape[0] - keep.size
        for i in keep:
            row = np.full(t_max, -1)
            row[:k] = cand[i]
            sup_rows.append(row)
            dims.append(k)
    return SubspaceFamily(X, np.array(sup_rows), np.array(dims), t_max, dedup_tol, merged)


def _dedup(X, cand: np.ndarray, key: np.ndarray, tol: float) -> np.ndarray:
    """Indices of ``cand`` (already lexicographic) that start a new span.

    ``|z'(P1 - P2)z| <= ||P1 - P2||`` for unit probes ``z``, so spans within
    ``tol`` have both keys within ``tol`` and only such pairs are compared.
    """
    n = cand.shape[0]
    order = np.argsort(key[:, 0], kind="stable")
    k0 = key[order, 0]
    window = tol + 1e-12
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    bases: dict = {}

    def basis(i):
        if i not in bases:
            bases[i] = _basis(X.entries[:, list(cand[i])])
        return bases[i]

    start = 0
    for a in range(n):
        while k0[a] - k0[start] > window:
            start += 1
        ia = order[a]
        for b in range(start, a):
            ib = order[b]
            if abs(key[ia, 1] - key[ib, 1]) > window:
                continue
            if find(ia) == find(ib):
                continue
            if projection_distance(basis(ia), basis(ib)) <= tol:
                ra, rb = find(ia), find(ib)
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n)])
    return np.flatnonzero(roots == np.arange(n))


# ---------------------------------------------------------------------------
# posterior over subspaces
# ---------------------------------------------------------------------------

@dataclass
class SubspacePosterior:
    family: SubspaceFamily
    log_weights: np.ndarray
    d: float
    proj_sq: np.ndarray = field(repr=False, default=None)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def dimension_posterior(self) -> np.ndarray:
        out = np.zeros(self.family.t_max + 1)
        np.add.at(out, self.family.dims, self.weights)
        return out


def log_dimension_prior_n(n: int, p: int, d: float) -> np.ndarray:
    """``log pi_n(t)`` for ``t = 0..n`` with ``pi_n(t)`` proportional to ``p^(-d t)``."""
    t = np.arange(n + 1)
    lw = -d * t * math.log(p)
    return lw - logsumexp(lw)


def subspace_projection_norms(fam: SubspaceFamily, y) -> np.ndarray:
    y = _y(y)
    out = np.zeros(len(fam))
    for k in range(1, fam.t_max + 1):
        rows = np.flatnonzero(fam.dims == k)
        for start in range(0, rows.size, 20_000):
            r = rows[start: start + 20_000]
            U, _ = _batched_bases(fam.X, fam.supports[r, :k])
            out[r] = (np.einsum("bnk,n->bk", U, y) ** 2).sum(axis=1)
    return out


def subspace_posterior(fam: SubspaceFamily, y, d: float = 4.0, p: int | None = None) -> SubspacePosterior:
    """Weights ``pi_n(t) / count(t) * (2 pi)^(t/2) * exp(||P_V y||^2 / 2)``."""
    if len(fam) == 0:
        raise EmptyFamily("empty subspace family")
    if d < 4:
        raise DomainError("d must be >= 4")
    p = fam.X.p if p is None else p
    n = fam.X.n
    lpn = log_dimension_prior_n(n, p, d)
    counts = fam.counts()
    ps = subspace_projection_norms(fam, y)
    t = fam.dims
    lw = lpn[t] - np.log(counts[t]) + 0.5 * t * LOG_2PI + 0.5 * ps
    return SubspacePosterior(fam, lw - logsumexp(lw), float(d), ps)


def subspace_predict_sample(sp: SubspacePosterior, y, rng, n_draws: int) -> np.ndarray:
    """Draws ``(n_draws, n)`` of the mean vector: ``V`` by weight, then
    ``N(P_V y, P_V)`` on ``V``."""
    y = _y(y)
    gen = as_generator(rng)
    w = sp.weights
    comp = gen.choice(len(sp.family), size=n_draws, p=w / w.sum())
    out = np.zeros((n_draws, y.shape[0]))
    for i in np.unique(comp):
        rows = np.flatnonzero(comp == i)
        U = sp.family.basis(int(i))
        if U.shape[1] == 0:
            continue
        c = U.T @ y + gen.standard_normal((rows.size, U.shape[1]))
        out[rows] = c @ U.T
    return out


def true_subspace_dim(X, beta0) -> int:
    """Dimension of the span of the true support's columns."""
    X = as_design(X)
    if beta0.s == 0:
        return 0
    sv = np.linalg.svd(X.columns(beta0.model.indices), compute_uv=False)
    return int(np.sum(sv > RANK_TOL * X.x_norm))


# ---------------------------------------------------------------------------
# maximal chi-square tail
# ---------------------------------------------------------------------------

def chi2_max_bound(N: int, d: int, r: float) -> float:
    """``N^(-(r-2)/4) (1/2 - 1/r)^(-d/2)``, the tail bound for the maximum of
    ``N`` marginally chi-square(d) variables at level ``r log N``."""
    return N ** (-(r - 2.0) / 4.0) * (0.5 - 1.0 / r) ** (-d / 2.0)


def chi2_max_exceedance(N: int, d: int, r: float, reps: int, rng):
    """Empirical ``P(max_i Q_i > r log N)`` for independent ``Q_i ~ chi2(d)``,
    with its binomial standard error."""
    gen = as_generator(rng)
    hits = 0
    thr = r * math.log(N)
    for start in range(0, reps, 1000):
        m = min(1000, reps - start)
        Q = gen.chisquare(d, size=(m, N))
        hits += int(np.sum(Q.max(axis=1) > thr))
    f = hits / reps
    return f, math.sqrt(max(f * (1 - f), 1.0 / reps) / reps)
