"""Exact posterior by model enumeration.

For a support ``S`` the likelihood completes the square around the restricted
least-squares fit ``bhat_S`` with ``Gamma_S = X_S' X_S``::

    -||y - X_S b||^2 / 2 + ||y||^2 / 2 = ||P_S y||^2 / 2 - (b - bhat_S)' Gamma_S (b - bhat_S) / 2

so the per-model marginal (relative to the empty model) is

    ||P_S y||^2 / 2 + (s/2) log(2 pi) - log|Gamma_S| / 2 + log E[g_S(b)],   b ~ N(bhat_S, Gamma_S^-1).

The expectation is computed in closed form (diagonal designs), by nested
quadrature (``|S| <= 3``) or by importance sampling from the Gaussian.

Sequence-model designs ``X = c I`` get a separate fast path,
:class:`SequencePosterior`, where the model weights factorize over
coordinates and every summary is exact through elementary symmetric
polynomials, without enumerating supports.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg
from scipy.special import logsumexp

from . import truncnorm
from .core import DesignMatrix, Model, Observation, SparseCoef, as_design, as_generator
from .errors import (ComplexityRefused, DimensionError, DomainError, IntegralError,
                     PrecisionWarning, RankError)
from .priors import DimensionPrior, LaplaceSlab, log_binom

LOG_2PI = truncnorm.LOG_2PI

RANK_TOL = 1e-10
ENUM_BUDGET = 2_000_000
IS_DRAWS = 20_000
IS_REL_SE = 0.005
BURN_IN = 50


def _y(y) -> np.ndarray:
    return y.y if isinstance(y, Observation) else np.asarray(y, dtype=float).reshape(-1)


def _model(S) -> Model:
    return S if isinstance(S, Model) else Model.of(S)


# ---------------------------------------------------------------------------
# per-model sufficient statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelStats:
    """Least-squares fit restricted to ``S`` and the Cholesky factor of ``Gamma_S``."""

    model: Model
    beta_hat: np.ndarray
    chol: np.ndarray
    logdet: float
    proj_sq: float

    @property
    def s(self) -> int:
        return self.model.s

    @property
    def precision(self) -> np.ndarray:
        return self.chol @ self.chol.T

    @property
    def covariance(self) -> np.ndarray:
        inv = linalg.solve_triangular(self.chol, np.eye(self.s), lower=True)
        return inv.T @ inv


def model_stats(X: DesignMatrix, y, S) -> ModelStats:
    """Raise :class:`RankError` when ``X_S`` is numerically rank deficient."""
    model = _model(S).check(X.p)
    y = _y(y)
    if y.shape[0] != X.n:
        raise DimensionError(f"observation length {y.shape[0]} != n={X.n}")
    s = model.s
    if s == 0:
        return ModelStats(model, np.zeros(0), np.zeros((0, 0)), 0.0, 0.0)
    if s > X.n:
        raise RankError(f"model {model} has more columns than rows")
    G = X.gram_block(model.indices)
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= RANK_TOL * X.x_norm ** 2:
        raise RankError(f"X_S is rank deficient for S = {model}")
    L = np.linalg.cholesky(G)
    rhs = X.columns(model.indices).T @ y
    bhat = linalg.cho_solve((L, True), rhs)
    return ModelStats(model, bhat, L, 2.0 * float(np.log(np.diag(L)).sum()), float(rhs @ bhat))


# ---------------------------------------------------------------------------
# marginal likelihood of one model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarginalEstimate:
    value: float
    se: float = 0.0
    method: str = "exact"
    imprecise: bool = False

    def __float__(self):
        return self.value


def _gauss_part(st: ModelStats) -> float:
    return 0.5 * st.proj_sq + 0.5 * st.s * LOG_2PI - 0.5 * st.logdet


def _box(center, sd, width):
    lo, hi = center - width * sd, center + width * sd
    # split at the kinks of the slab on the coordinate axes
    inside = (lo < 0.0) & (hi > 0.0)
    points = [np.where(inside, 0.0, 0.5 * (lo + hi))]
    return lo, hi, points


def _cubature(f, lo, hi, points, rtol=1e-10):
    res = integrate.cubature(f, lo, hi, rtol=rtol, atol=0.0, points=points)
    if res.status != "converged" or not res.estimate > 0:
        raise IntegralError(f"cubature failed ({res.status}, estimate {res.estimate})")
    return float(res.estimate)


def _log_expect_laplace_quad(st: ModelStats, lam: float) -> float:
    """``log E exp(-lam ||b||_1)`` with the last coordinate integrated analytically."""
    s = st.s
    m = st.beta_hat
    Sigma = st.covariance
    if s == 1:
        return float(truncnorm.log_expect_laplace_factor(m[0], Sigma[0, 0], lam))
    # b_last | b_rest ~ N(m_last + K'(b_rest - m_rest), v)
    k = s - 1
    S11 = Sigma[:k, :k]
    K = np.linalg.solve(S11, Sigma[:k, k])
    v = float(Sigma[k, k] - Sigma[:k, k] @ K)
    S11_inv = np.linalg.inv(S11)
    log_c = -0.5 * (k * LOG_2PI + np.linalg.slogdet(S11)[1])
    shift = -lam * float(np.abs(m).sum())

    def integrand(B):
        d = B - m[:k]
        lv = (log_c - 0.5 * np.einsum("ni,ij,nj->n", d, S11_inv, d) - lam * np.abs(B).sum(axis=1)
              + truncnorm.log_expect_laplace_factor(m[k] + d @ K, v, lam) - shift)
        return np.exp(lv)

    lo, hi, points = _box(m[:k], np.sqrt(np.diag(S11)), 12.0)
    return math.log(_cubature(integrand, lo, hi, points)) + shift


def _log_expect_slab_quad(st: ModelStats, slab) -> float:
    """``log E g_S(b)`` by cubature over all coordinates (any slab).

    Integrates over whitened coordinates ``b = bhat + L^{-T} z`` so that the
    Gaussian factor is isotropic; an axis box around a correlated Gaussian
    wastes most of its volume and stalls the subdivision.
    """
    s = st.s
    m = st.beta_hat
    R = linalg.solve_triangular(st.chol, np.eye(s), lower=True).T  # L^{-T}
    log_c = -0.5 * s * LOG_2PI
    shift = float(np.sum(slab.log_density(m)))

    def integrand(Z):
        return np.exp(log_c - 0.5 * (Z * Z).sum(axis=1)
                      + slab.log_density(m + Z @ R.T).sum(axis=1) - shift)

    w = np.full(s, 10.0)
    return math.log(_cubature(integrand, -w, w, [], rtol=1e-9)) + shift


def _tilted_mode(st: ModelStats, lam: float, tol: float = 1e-12, max_iter: int = 10_000):
    """Minimizer of ``(b - bhat)' Gamma (b - bhat) / 2 + lam ||b||_1`` by coordinate descent."""
    G = st.precision
    d = np.diag(G)
    b = st.beta_hat.copy()
    g = np.zeros_like(b)  # Gamma (b - bhat)
    for _ in range(max_iter):
        delta = 0.0
        for j in range(b.shape[0]):
            z = d[j] * b[j] - g[j]
            new = math.copysign(max(abs(z) - lam, 0.0), z) / d[j]
            if new != b[j]:
                g += G[:, j] * (new - b[j])
                delta = max(delta, abs(new - b[j]))
                b[j] = new
        if delta <= tol * (1.0 + np.abs(b).max()):
            break
    return b


def _log_expect_importance(st: ModelStats, slab, gen, n_draws: int):
    z = gen.standard_normal((n_draws, st.s))
    # proposal covariance Gamma^-1 via b = center + L^-T z
    noise = linalg.solve_triangular(st.chol, z.T, lower=True, trans="T").T
    if isinstance(slab, LaplaceSlab):
        # centering at the tilted mode keeps the weights bounded
        c = _tilted_mode(st, slab.lam)
        b = c + noise
        G = st.precision
        shift = st.beta_hat - c
        lw = (-slab.lam * np.abs(b).sum(axis=1) + (b - c) @ (G @ shift)
              - 0.5 * float(shift @ G @ shift))
        const = st.s * slab.log_normalizer
    else:
        b = st.beta_hat + noise
        lw = slab.log_density(b).sum(axis=1)
        const = 0.0
    top = lw.max()
    w = np.exp(lw - top)
    mean = w.mean()
    rel_se = w.std(ddof=1) / (mean * math.sqrt(n_draws))
    return const + top + math.log(mean), rel_se


def _sequence_scale(X: DesignMatrix) -> float:
    c = X.identity_scale
    if c is None:
        raise DomainError("sequence_closed needs X = c I")
    return c


def log_marginal(X, y, S, slab, method: str = "auto", n_draws: int = IS_DRAWS,
                 rng=None) -> MarginalEstimate:
    """Log marginal likelihood of model ``S`` relative to the empty model.

    ``method`` is one of ``auto``, ``sequence_closed``, ``quadrature``,
    ``importance``. Importance sampling flags the result (and warns) when the
    relative standard error of the expectation exceeds 0.5%.
    """
    X = as_design(X)
    model = _model(S)
    if model.s == 0:
        return MarginalEstimate(0.0, 0.0, "exact")
    if method == "auto":
        if X.identity_scale is not None:
            method = "sequence_closed"
        elif model.s <= 3:
            method = "quadrature"
        else:
            method = "importance"
    st = model_stats(X, y, model)
    base = _gauss_part(st)
    if method == "sequence_closed":
        c = _sequence_scale(X)
        v = 1.0 / (c * c)
        if isinstance(slab, LaplaceSlab):
            terms = truncnorm.log_expect_laplace_factor(st.beta_hat, v, slab.lam)
            return MarginalEstimate(base + float(np.sum(terms)) + model.s * slab.log_normalizer,
                                    0.0, method)
        total = 0.0
        for b in st.beta_hat:
            one = ModelStats(Model((0,)), np.array([b]), np.array([[c]]), 2.0 * math.log(c), 0.0)
            total += _log_expect_slab_quad(one, slab)
        return MarginalEstimate(base + total, 0.0, method)
    if method == "quadrature":
        if model.s > 3:
            raise DomainError("quadrature is limited to |S| <= 3")
        if isinstance(slab, LaplaceSlab):
            val = _log_expect_laplace_quad(st, slab.lam) + model.s * slab.log_normalizer
        else:
            val = _log_expect_slab_quad(st, slab)
        return MarginalEstimate(base + val, 0.0, method)
    if method == "importance":
        gen = as_generator(rng) if rng is not None else \
            np.random.default_rng([0x5B1AB, model.s, *model.indices])
        val, rel_se = _log_expect_importance(st, slab, gen, n_draws)
        bad = bool(rel_se > IS_REL_SE)
        if bad:
            warnings.warn(f"importance estimate for {model} has relative SE {rel_se:.3g}",
                          PrecisionWarning, stacklevel=2)
        return MarginalEstimate(base + val, rel_se, method, bad)
    raise DomainError(f"unknown marginal method {method!r}")


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

@dataclass
class ModelPosterior:
    """Normalized posterior over every full-rank support of size ``<= s_max``."""

    models: list
    log_weights: np.ndarray
    stats: list
    dp: DimensionPrior
    slab: object
    p: int
    s_max: int
    log_marginals: np.ndarray = None
    marginal_se: np.ndarray = None
    methods: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([m.s for m in self.models])

    def index_of(self, S) -> int | None:
        if not hasattr(self, "_lookup"):
            self._lookup = {m: i for i, m in enumerate(self.models)}
        return self._lookup.get(_model(S))

    def weight_of(self, S) -> float:
        i = self.index_of(S)
        return 0.0 if i is None else float(np.exp(self.log_weights[i]))

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "s_max": self.s_max,
            "models": [{"support": list(m.indices), "log_weight": float(lw),
                        "beta_hat": st.beta_hat.tolist(), "method": meth}
                       for m, lw, st, meth in zip(self.models, self.log_weights,
                                                  self.stats, self.methods)],
            "excluded": [{"support": list(m.indices), "reason": r} for m, r in self.excluded],
        }


def default_s_max(n: int, p: int, expected_s0: float) -> int:
    return int(min(n, p, 2 * math.ceil(expected_s0) + 10))


def enumerate_posterior(X, y, dp: DimensionPrior, slab, lam: float | None = None,
                        s_max: int | None = None, method: str = "auto",
                        budget: int = ENUM_BUDGET, n_draws: int = IS_DRAWS) -> ModelPosterior:
    """Posterior weights ``pi(s) / C(p, s) * exp(log_marginal(S))`` over all supports.

    Models with ``|S| > s_max`` are not enumerated (their mass is treated as
    zero and ``s_max`` is recorded). Rank-deficient supports are excluded and
    listed in ``excluded``.
    """
    X = as_design(X)
    y = _y(y)
    if y.shape[0] != X.n:
        raise DimensionError(f"observation length {y.shape[0]} != n={X.n}")
    if dp.p != X.p:
        raise DimensionError(f"dimension prior built for p={dp.p}, design has p={X.p}")
    if lam is not None:
        slab = slab.with_lambda(lam)
    if s_max is None:
        s_max = default_s_max(X.n, X.p, float(np.arange(X.p + 1) @ dp.weights))
    s_max = min(s_max, X.p)
    need = sum(math.comb(X.p, k) for k in range(s_max + 1))
    if need > budget:
        raise ComplexityRefused(f"enumerating {need} models exceeds the budget {budget}",
                                needed=need, budget=budget)
    models, stats, lms, ses, methods, excluded = [], [], [], [], [], []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PrecisionWarning)
        for k in range(s_max + 1):
            if not np.isfinite(dp.log_weights[k]):
                continue
            for idx in itertools.combinations(range(X.p), k):
                m = Model(idx)
                try:
                    st = model_stats(X, y, m)
                except RankError as exc:
                    excluded.append((m, str(exc)))
                    continue
                est = log_marginal(X, y, m, slab, method, n_draws)
                models.append(m)
                stats.append(st)
                lms.append(est.value + dp.log_weights[k] - float(log_binom(X.p, k)))
                ses.append(est.se)
                methods.append(est.method)
    n_bad = sum(issubclass(w.category, PrecisionWarning) for w in caught)
    if n_bad:
        warnings.warn(f"{n_bad} importance-sampled marginals missed the precision target",
                      PrecisionWarning, stacklevel=2)
    lw = np.array(lms)
    lm = lw - np.array([dp.log_weights[m.s] - float(log_binom(X.p, m.s)) for m in models])
    return ModelPosterior(models, lw - logsumexp(lw), stats, dp, slab, X.p, s_max,
                          lm, np.array(ses), methods, excluded)


# ---------------------------------------------------------------------------
# sequence-model fast path
# ---------------------------------------------------------------------------

def _esp_table(h: np.ndarray, reverse: bool) -> np.ndarray:
    """Log elementary symmetric polynomials of ``exp(h)`` over prefixes or suffixes.

    ``T[j, k]`` is ``log e_k`` of the items ``0..j-1`` (prefix) or ``j..p-1``
    (suffix); row ``0`` (prefix) or ``p`` (suffix) is the empty set.
    """
    p = h.shape[0]
    T = np.full((p + 1, p + 1), -np.inf)
    order = range(p - 1, -1, -1) if reverse else range(p)
    row = 0 if not reverse else p
    T[row, 0] = 0.0
    prev = T[row]
    for j in order:
        cur = prev.copy()
        cur[1:] = np.logaddexp(prev[1:], prev[:-1] + h[j])
        row = j if reverse else j + 1
        T[row] = cur
        prev = cur
    return T


class SequencePosterior:
    """Exact spike-and-slab posterior for ``X = c I`` with a Laplace slab.

    Given ``S`` the coordinates are independent, and the posterior weight of
    ``S`` is ``pi(|S|) / C(p, |S|) * prod_{i in S} exp(h_i)``, where ``h_i`` is
    the one-coordinate log marginal. Sums over supports of a given size are
    elementary symmetric polynomials, computed in the log domain.
    """

    def __init__(self, y, dp: DimensionPrior, slab: LaplaceSlab, scale: float = 1.0):
        if not isinstance(slab, LaplaceSlab):
            raise DomainError("the sequence fast path needs a Laplace slab")
        self.y = _y(y).copy()
        self.p = self.y.shape[0]
        if dp.p != self.p:
            raise DimensionError(f"dimension prior built for p={dp.p}, data has p={self.p}")
        self.dp = dp
        self.slab = slab
        self.scale = float(scale)
        self.lam = slab.lam
        self.v = 1.0 / self.scale ** 2
        self.m = self.y / self.scale
        # h_i = y_i^2/2 + log(sqrt(2 pi v)) + log E g(b), b ~ N(y_i / c, 1/c^2)
        self.h = (0.5 * self.y ** 2 + 0.5 * (LOG_2PI + math.log(self.v)) + slab.log_normalizer
                  + truncnorm.log_expect_laplace_factor(self.m, self.v, self.lam))
        self._suffix = _esp_table(self.h, reverse=True)
        self._prefix = None
        ks = np.arange(self.p + 1)
        self._log_size_factor = dp.log_weights - log_binom(self.p, ks)
        lw = self._log_size_factor + self._suffix[0]
        self.log_z = float(logsumexp(lw))
        self.log_dim_post = lw - self.log_z
        self._incl = None

    @classmethod
    def from_design(cls, X, y, dp, slab) -> "SequencePosterior":
        X = as_design(X)
        c = X.identity_scale
        if c is None:
            raise DomainError("the sequence fast path needs X = c I")
        return cls(y, dp, slab, c)

    # --- model-level summaries ---------------------------------------------

    def log_weight(self, S) -> float:
        m = _model(S)
        return float(self._log_size_factor[m.s] + self.h[list(m.indices)].sum() - self.log_z)

    def dimension_posterior(self) -> np.ndarray:
        return np.exp(self.log_dim_post)

    def dimension_tail(self, k: int) -> float:
        if k < 0:
            return 1.0
        if k >= self.p:
            return 0.0
        return float(np.exp(logsumexp(self.log_dim_post[k + 1:])))

    def inclusion_probabilities(self) -> np.ndarray:
        if self._incl is None:
            p = self.p
            if self._prefix is None:
                self._prefix = _esp_table(self.h, reverse=False)
            lw = self._log_size_factor - self.log_z
            # H[a, b] = lw[a + b + 1]
            a = np.arange(p)[:, None]
            b = np.arange(p)[None, :]
            pos = a + b + 1
            H = np.where(pos <= p, lw[np.minimum(pos, p)], -np.inf)
            q = np.empty(p)
            for j in range(p):
                inner = logsumexp(self._suffix[j + 1][None, :p] + H, axis=1)
                q[j] = math.exp(min(0.0, self.h[j] + logsumexp(self._prefix[j][:p] + inner)))
            self._incl = q
        return self._incl

    def map_model(self) -> Model:
        order = np.lexsort((np.arange(self.p), -self.h))
        csum = np.concatenate([[0.0], np.cumsum(self.h[order])])
        score = self._log_size_factor + csum
        k = int(np.argmax(score))
        return Model.of(order[:k])

    def superset_mass(self, S0, strict: bool = True) -> float:
        """Posterior mass of supports containing ``S0`` (strictly, by default)."""
        m0 = _model(S0)
        rest = np.setdiff1d(np.arange(self.p), np.asarray(m0.indices, dtype=int))
        suf = _esp_table(self.h[rest], reverse=True)[0]
        s0 = m0.s
        lw = self._log_size_factor[s0:] + suf[: self.p - s0 + 1]
        if strict:
            lw = lw[1:]
        if lw.size == 0:
            return 0.0
        return float(np.exp(logsumexp(lw) + self.h[list(m0.indices)].sum() - self.log_z))

    # --- sampling ---------------------------------------------------------

    def sample_models(self, gen, n_draws: int) -> np.ndarray:
        """Boolean inclusion matrix ``(n_draws, p)`` of exact posterior supports."""
        gen = as_generator(gen)
        prob = np.exp(self.log_dim_post - logsumexp(self.log_dim_post))
        k = gen.choice(self.p + 1, size=n_draws, p=prob / prob.sum())
        inc = np.zeros((n_draws, self.p), dtype=bool)
        suf = self._suffix
        for j in range(self.p):
            active = k > 0
            if not np.any(active):
                break
            kk = k[active]
            lp = self.h[j] + suf[j + 1][kk - 1] - suf[j][kk]
            take = gen.random(kk.shape[0]) < np.exp(np.minimum(lp, 0.0))
            rows = np.flatnonzero(active)[take]
            inc[rows, j] = True
            k[rows] -= 1
        return inc

    def sample(self, gen, n_draws: int) -> np.ndarray:
        """Dense ``(n_draws, p)`` array of exact posterior draws of ``beta``."""
        gen = as_generator(gen)
        inc = self.sample_models(gen, n_draws)
        out = np.zeros((n_draws, self.p))
        rows, cols = np.nonzero(inc)
        if rows.size:
            out[rows, cols] = truncnorm.sample_two_piece(self.m[cols], self.v, self.lam, gen)
        return out

    # --- coordinate summaries ----------------------------------------------

    def posterior_mean(self) -> np.ndarray:
        m, v, lam = self.m, self.v, self.lam
        pr = truncnorm.prob_right(m, v, lam)
        sd = math.sqrt(v)
        from scipy.special import ndtr
        from scipy.stats import norm
        # mean of each truncated piece
        ml, mr = m + lam * v, m - lam * v
        mean_l = ml - sd * norm.pdf(ml / sd) / np.maximum(ndtr(-ml / sd), 1e-300)
        mean_r = mr + sd * norm.pdf(mr / sd) / np.maximum(ndtr(mr / sd), 1e-300)
        cond = pr * mean_r + (1.0 - pr) * mean_l
        return self.inclusion_probabilities() * cond

    def credible_limit(self, j: int, level: float = 0.975) -> "CredibleSummary":
        q = self.inclusion_probabilities()[j]
        pi_hat = 1.0 - q
        m, v, lam = self.m[j], self.v, self.lam
        h0 = q * float(truncnorm.cdf(0.0, m, v, lam))
        if q <= 0:
            R = 0.0
        elif level <= h0:
            R = float(truncnorm.quantile(level / q, m, v, lam))
        elif level <= h0 + pi_hat:
            R = 0.0
        else:
            R = float(truncnorm.quantile(min((level - pi_hat) / q, 1.0), m, v, lam))
        return CredibleSummary(j, float(pi_hat), h0, R, level)


# ---------------------------------------------------------------------------
# generic summaries
# ---------------------------------------------------------------------------

def inclusion_probabilities(mp) -> np.ndarray:
    if isinstance(mp, SequencePosterior):
        return mp.inclusion_probabilities()
    q = np.zeros(mp.p)
    w = mp.weights
    for m, wi in zip(mp.models, w):
        if m.s:
            q[list(m.indices)] += wi
    return np.minimum(q, 1.0)


def dimension_tail(mp, k: int) -> float:
    if isinstance(mp, SequencePosterior):
        return mp.dimension_tail(k)
    if k < 0:
        return 1.0
    sel = mp.sizes > k
    if not np.any(sel):
        return 0.0
    return float(np.exp(logsumexp(mp.log_weights[sel])))


_TIE = 1e-10


def map_model(mp) -> Model:
    """Posterior mode over supports; near-ties go to the smaller, then lexicographically first, model."""
    if isinstance(mp, SequencePosterior):
        return mp.map_model()
    lw = mp.log_weights
    best = lw.max()
    cands = [m for m, v in zip(mp.models, lw) if v >= best - _TIE]
    return min(cands, key=lambda m: (m.s, m.indices))


def _gibbs_block(st: ModelStats, slab, gen, n: int, sweeps: int) -> np.ndarray:
    """``n`` independent within-model chains, each run ``sweeps`` coordinate sweeps from ``bhat``."""
    s = st.s
    G = st.precision
    bhat = st.beta_hat
    B = np.tile(bhat, (n, 1))
    diag = np.diag(G)
    for _ in range(sweeps):
        for i in range(s):
            v = 1.0 / diag[i]
            # conditional mean of b_i given the rest under N(bhat, G^-1)
            m = bhat[i] - v * ((B - bhat) @ G[:, i] - diag[i] * (B[:, i] - bhat[i]))
            B[:, i] = conditional_draw(m, v, slab, B[:, i], gen)
    return B


def conditional_draw(m, v, slab, current, gen):
    """One update of a coordinate whose conditional is ``N(m, v)`` times the slab.

    Exact for the Laplace slab; otherwise an independence Metropolis step
    proposing from ``N(m, v)``.
    """
    if isinstance(slab, LaplaceSlab):
        return truncnorm.sample_two_piece(m, v, slab.lam, gen)
    prop = m + math.sqrt(v) * gen.standard_normal(np.shape(m))
    log_a = slab.log_density(prop) - slab.log_density(current)
    ok = np.log(gen.random(np.shape(m))) < log_a
    return np.where(ok, prop, current)


def sample_posterior_array(mp, X, y, rng, n_draws: int, burn_in: int = BURN_IN) -> np.ndarray:
    """Dense ``(n_draws, p)`` posterior draws: model by weight, coefficients by Gibbs."""
    gen = as_generator(rng)
    if isinstance(mp, SequencePosterior):
        return mp.sample(gen, n_draws)
    X = as_design(X)
    w = mp.weights
    idx = gen.choice(len(mp.models), size=n_draws, p=w / w.sum())
    out = np.zeros((n_draws, mp.p))
    for k in np.unique(idx):
        rows = np.flatnonzero(idx == k)
        st = mp.stats[k]
        if st.s == 0:
            continue
        B = _gibbs_block(st, mp.slab, gen, rows.size, burn_in)
        out[np.ix_(rows, list(st.model.indices))] = B
    return out


def sample_posterior(mp, X, y, rng, n_draws: int, burn_in: int = BURN_IN) -> list:
    arr = sample_posterior_array(mp, X, y, rng, n_draws, burn_in)
    return [SparseCoef.from_dense(row) for row in arr]


def _dense(draws) -> np.ndarray:
    if isinstance(draws, np.ndarray):
        return draws
    return np.array([d.to_dense() for d in draws])


def posterior_mean(mp=None, draws=None) -> np.ndarray:
    """Mean of ``beta``: exact for the sequence path, else the average of ``draws``."""
    if isinstance(mp, SequencePosterior) and draws is None:
        return mp.posterior_mean()
    if draws is None:
        raise DomainError("posterior_mean needs draws for a general design")
    return _dense(draws).mean(axis=0)


@dataclass(frozen=True)
class CredibleSummary:
    """Upper credible limit of one coordinate accounting for its atom at zero.

    ``h_at_zero`` is the continuous part's CDF at 0, with total mass
    ``1 - pi_hat``.
    """

    j: int
    pi_hat: float
    h_at_zero: float
    R_hat: float
    level: float = 0.975


MIN_DRAWS = 1000


def credible_limit(source, j: int, level: float = 0.975, pi_hat: float | None = None,
                   mp=None) -> CredibleSummary:
    """Three-case upper limit ``R_j`` at ``level``.

    ``source`` is a :class:`SequencePosterior` (exact marginal) or posterior
    draws; for draws ``pi_hat`` comes from ``mp`` (model weights) when given,
    else from the fraction of zero draws.
    """
    if isinstance(source, SequencePosterior):
        return source.credible_limit(j, level)
    col = _dense(source)[:, j]
    if col.shape[0] < MIN_DRAWS:
        warnings.warn(f"only {col.shape[0]} draws for a credible limit", PrecisionWarning,
                      stacklevel=2)
    if pi_hat is None:
        pi_hat = 1.0 - inclusion_probabilities(mp)[j] if mp is not None else float(np.mean(col == 0))
    nz = np.sort(col[col != 0])
    mass = 1.0 - pi_hat
    if nz.size == 0 or mass <= 0:
        return CredibleSummary(j, float(pi_hat), 0.0, 0.0, level)
    h0 = mass * np.searchsorted(nz, 0.0, side="right") / nz.size

    def h_inv(t):
        frac = min(max(t / mass, 0.0), 1.0)
        k = min(max(int(math.ceil(frac * nz.size)) - 1, 0), nz.size - 1)
        return float(nz[k])

    if level <= h0:
        R = h_inv(level)
    elif level <= h0 + pi_hat:
        R = 0.0
    else:
        R = h_inv(level - pi_hat)
    return CredibleSummary(j, float(pi_hat), float(h0), R, level)
