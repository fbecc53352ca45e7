"""Model-selection priors: dimension priors, slab densities and the joint prior.

The joint prior on ``(S, beta)`` is ``pi_p(|S|) / C(p, |S|) * prod_{i in S} g(beta_i)``
with ``beta`` identically zero off ``S``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import betaln, gammaln, logsumexp

from .core import DesignMatrix, Model, SparseCoef, as_generator
from .errors import CertificateRefused, DomainError


def log_binom(p, s):
    s = np.asarray(s, dtype=float)
    return gammaln(p + 1.0) - gammaln(s + 1.0) - gammaln(p - s + 1.0)


# ---------------------------------------------------------------------------
# dimension priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DimensionPrior:
    """Prior ``pi_p`` on the model dimension ``s in {0, ..., p}``.

    Build with :meth:`complexity`, :meth:`beta_binomial` or :meth:`explicit`.
    ``log_weights[s]`` is normalized; zero weights are ``-inf``.
    """

    kind: str
    p: int
    params: dict = field(default_factory=dict)
    log_weights: np.ndarray = field(default=None, repr=False)

    @classmethod
    def complexity(cls, p: int, a: float = 1.0, c: float = 1.0) -> "DimensionPrior":
        if a <= 0 or c <= 0:
            raise DomainError("complexity prior needs a > 0 and c > 0")
        s = np.arange(p + 1)
        lw = -s * (math.log(c) + a * math.log(p))
        return cls("complexity", p, {"a": float(a), "c": float(c)}, lw - logsumexp(lw))

    @classmethod
    def beta_binomial(cls, p: int, u: float = 2.0) -> "DimensionPrior":
        """Binomial(p, r) dimension with ``r ~ Beta(1, p^u)`` integrated out."""
        if u <= 1:
            raise DomainError("beta-binomial prior needs u > 1")
        b = float(p) ** u
        s = np.arange(p + 1, dtype=float)
        lw = log_binom(p, s) + betaln(s + 1.0, p - s + b) - betaln(1.0, b)
        return cls("beta_binomial", p, {"u": float(u)}, lw - logsumexp(lw))

    @classmethod
    def explicit(cls, weights) -> "DimensionPrior":
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.any(w > 0):
            raise DomainError("explicit prior weights must be nonnegative and not all zero")
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        return cls("explicit", w.shape[0] - 1, {"weights": w.tolist()}, lw - logsumexp(lw))

    @classmethod
    def point_mass(cls, p: int, s: int) -> "DimensionPrior":
        w = np.zeros(p + 1)
        w[s] = 1.0
        return cls.explicit(w)

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)

    def log_pmf(self, s: int) -> float:
        return log_dim_prior(self, s)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def to_config(self) -> dict:
        return {"kind": self.kind, **{k: v for k, v in self.params.items() if k != "weights"}}


def log_dim_prior(dp: DimensionPrior, s: int) -> float:
    if not 0 <= s <= dp.p:
        raise DomainError(f"dimension {s} outside 0..{dp.p}")
    return float(dp.log_weights[s])


@dataclass(frozen=True)
class DimPriorCertificate:
    """Constants with ``A1 p^-A3 <= pi(s)/pi(s-1) <= A2 p^-A4`` for ``s = 1..p``.

    ``power_decay`` is False when the ratios carry no dependence on ``p``
    (explicit weights), in which case both exponents are reported as zero.
    """

    A1: float
    A2: float
    A3: float
    A4: float
    power_decay: bool
    min_log_ratio: float
    max_log_ratio: float


def certify_dimension_prior(dp: DimensionPrior, p: int | None = None) -> DimPriorCertificate:
    p = dp.p if p is None else p
    if p != dp.p:
        raise DomainError(f"prior built for p={dp.p}, asked to certify p={p}")
    lw = dp.log_weights
    if not np.all(np.isfinite(lw)):
        bad = np.flatnonzero(~np.isfinite(lw)).tolist()
        raise CertificateRefused(f"zero prior weight at dimensions {bad}")
    if p < 1:
        raise CertificateRefused("no ratios to certify for p = 0")
    lr = np.diff(lw)
    lo, hi = float(lr.min()), float(lr.max())
    logp = math.log(p)
    if dp.kind == "complexity":
        a, c = dp.params["a"], dp.params["c"]
        cert = DimPriorCertificate(1.0 / c, 1.0 / c, a, a, True, lo, hi)
    elif dp.kind == "explicit" or p == 1:
        cert = DimPriorCertificate(math.exp(lo), math.exp(hi), 0.0, 0.0, False, lo, hi)
    else:
        a4 = -hi / logp
        a3 = -lo / logp
        cert = DimPriorCertificate(1.0, 1.0, a3, a4, a4 > 0, lo, hi)
    # the bounds must hold for every ratio
    lower = math.log(cert.A1) - cert.A3 * logp
    upper = math.log(cert.A2) - cert.A4 * logp
    slack = 1e-9 * max(1.0, abs(lower), abs(upper))
    if lo < lower - slack or hi > upper + slack:
        raise CertificateRefused("computed constants fail to bound the ratio sequence")
    return cert


# ---------------------------------------------------------------------------
# slab densities
# ---------------------------------------------------------------------------

class LaplaceSlab:
    """Density ``(lam / 2) exp(-lam |x|)``."""

    kind = "laplace"

    def __init__(self, lam: float):
        if not lam > 0:
            raise DomainError("Laplace slab needs lam > 0")
        self.lam = float(lam)
        self.log_normalizer = math.log(self.lam / 2.0)

    def log_density(self, x):
        return self.log_normalizer - self.lam * np.abs(x)

    @property
    def variance(self) -> float:
        return 2.0 / self.lam ** 2

    def sample(self, size, gen) -> np.ndarray:
        gen = as_generator(gen)
        mag = gen.exponential(1.0 / self.lam, size)
        sign = np.where(gen.random(size) < 0.5, -1.0, 1.0)
        return sign * mag

    def with_lambda(self, lam: float) -> "LaplaceSlab":
        return LaplaceSlab(lam)

    def to_config(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam}

    def __repr__(self):
        return f"LaplaceSlab(lam={self.lam:.6g})"


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def _tail_integral(U: float, mu: float) -> float:
    # int_U^inf du / (1 + u^mu) = sum_k (-1)^k U^(1-(k+1)mu) / ((k+1)mu - 1), U > 1
    total, k = 0.0, 0
    while True:
        term = (-1) ** k * U ** (1.0 - (k + 1) * mu) / ((k + 1) * mu - 1.0)
        total += term
        if abs(term) < 1e-18 or k > 60:
            return total
        k += 1


class HeavyTailedSlab:
    """Density ``proportional to lam / (1 + |lam x|^mu)`` with ``mu > 3``.

    The normalizer comes from adaptive quadrature on ``[0, 10]`` plus an
    alternating power series for the tail. A cumulative table on a fine grid
    serves inverse-CDF sampling.
    """

    kind = "heavy_tailed"
    _U_SPLIT = 10.0

    def __init__(self, lam: float, mu: float = 4.0):
        if not lam > 0:
            raise DomainError("heavy-tailed slab needs lam > 0")
        if not mu > 3:
            raise DomainError("heavy-tailed slab needs mu > 3")
        self.lam = float(lam)
        self.mu = float(mu)
        core, _ = integrate.quad(self._kernel, 0.0, self._U_SPLIT, epsabs=1e-13, epsrel=1e-12,
                                 limit=200)
        self._half_mass = core + _tail_integral(self._U_SPLIT, self.mu)
        # Z = int_R du / (1 + |u|^mu); density in x is lam / (Z (1 + |lam x|^mu))
        self.log_normalizer = math.log(self.lam) - math.log(2.0 * self._half_mass)
        self._table = None

    def _kernel(self, u):
        return 1.0 / (1.0 + np.abs(u) ** self.mu)

    def log_density(self, x):
        return self.log_normalizer - np.log1p(np.abs(self.lam * np.asarray(x)) ** self.mu)

    @property
    def variance(self) -> float:
        def second(u):
            return u * u / (1.0 + u ** self.mu)
        core, _ = integrate.quad(second, 0.0, self._U_SPLIT, epsabs=1e-13, epsrel=1e-12)
        # int_U^inf u^2/(1+u^mu) = sum_k (-1)^k U^(3-(k+1)mu)/((k+1)mu-3)
        tail, k = 0.0, 0
        while True:
            term = (-1) ** k * self._U_SPLIT ** (3.0 - (k + 1) * self.mu) / ((k + 1) * self.mu - 3.0)
            tail += term
            if abs(term) < 1e-18 or k > 200:
                break
            k += 1
        return (core + tail) / self._half_mass / self.lam ** 2

    def _build_table(self):
        grid = np.concatenate([np.linspace(0.0, self._U_SPLIT, 4001),
                               np.geomspace(self._U_SPLIT, 1e6, 4001)[1:]])
        a, b = grid[:-1], grid[1:]
        half = 0.5 * (b - a)
        nodes = (a + half)[:, None] + half[:, None] * _GL_X[None, :]
        pieces = (self._kernel(nodes) * _GL_W[None, :]).sum(axis=1) * half
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        self._table = (grid, cum)

    def _half_cdf_inverse(self, t):
        """Solve ``int_0^u k = t`` for ``u`` (t in [0, half_mass))."""
        if self._table is None:
            self._build_table()
        grid, cum = self._table
        t = np.asarray(t, dtype=float)
        u = np.empty_like(t)
        inside = t < cum[-1]
        tin = t[inside]
        k = np.clip(np.searchsorted(cum, tin, side="right") - 1, 0, grid.shape[0] - 2)
        lo, hi = grid[k], grid[k + 1]
        x = lo + (hi - lo) * (tin - cum[k]) / (cum[k + 1] - cum[k])
        for _ in range(4):
            half = 0.5 * (x - lo)
            nodes = (lo + half)[:, None] + half[:, None] * _GL_X[None, :]
            partial = cum[k] + (self._kernel(nodes) * _GL_W[None, :]).sum(axis=1) * half
            x = np.clip(x - (partial - tin) / self._kernel(x), lo, hi)
        u[inside] = x
        # beyond the table: leading-order tail u^(1-mu)/(mu-1)
        rem = self._half_mass - t[~inside]
        u[~inside] = (np.maximum(rem, 1e-300) * (self.mu - 1.0)) ** (-1.0 / (self.mu - 1.0))
        return u

    def sample(self, size, gen) -> np.ndarray:
        gen = as_generator(gen)
        v = gen.random(size)
        sign = np.where(gen.random(size) < 0.5, -1.0, 1.0)
        mag = self._half_cdf_inverse(v * self._half_mass)
        return sign * mag / self.lam

    def cdf(self, x):
        """Distribution function, by quadrature (used for checks, not sampling)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            u = abs(self.lam * xi)
            if u <= self._U_SPLIT:
                part, _ = integrate.quad(self._kernel, 0.0, u, epsabs=1e-13)
            else:
                part = self._half_mass - _tail_integral(u, self.mu)
            frac = part / self._half_mass
            out[i] = 0.5 + 0.5 * math.copysign(frac, xi)
        return out

    def with_lambda(self, lam: float) -> "HeavyTailedSlab":
        return HeavyTailedSlab(lam, self.mu)

    def to_config(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "mu": self.mu}

    def __repr__(self):
        return f"HeavyTailedSlab(lam={self.lam:.6g}, mu={self.mu:.6g})"


SlabDensity = LaplaceSlab | HeavyTailedSlab


def log_slab(slab: SlabDensity, beta_s) -> float:
    beta_s = np.asarray(beta_s, dtype=float)
    return float(np.sum(slab.log_density(beta_s)))


def log_joint_prior(dp: DimensionPrior, slab: SlabDensity, beta: SparseCoef, p: int | None = None) -> float:
    p = beta.p if p is None else p
    s = beta.s
    if s > p:
        raise DomainError(f"support size {s} exceeds p={p}")
    return log_dim_prior(dp, s) - float(log_binom(p, s)) + log_slab(slab, beta.values)


def sample_prior(dp: DimensionPrior, slab: SlabDensity, p: int, rng) -> SparseCoef:
    gen = as_generator(rng)
    s = int(gen.choice(p + 1, p=dp.weights / dp.weights.sum()))
    idx = np.sort(gen.choice(p, size=s, replace=False)) if s else np.zeros(0, dtype=int)
    vals = slab.sample(s, gen)
    vals[vals == 0.0] = np.finfo(float).tiny
    return SparseCoef(Model(tuple(idx)), vals, p)


# ---------------------------------------------------------------------------
# slab parameter range
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaRange:
    lower: float
    upper: float

    @property
    def lambda_bar(self) -> float:
        return self.upper / 2.0

    def contains(self, lam: float) -> bool:
        return self.lower <= lam <= self.upper


def lambda_range(X: DesignMatrix) -> LambdaRange:
    """``||X|| / p <= lam <= 2 lam_bar`` with ``lam_bar = 2 ||X|| sqrt(log p)``."""
    lam_bar = 2.0 * X.x_norm * math.sqrt(math.log(X.p)) if X.p > 1 else 0.0
    return LambdaRange(X.x_norm / X.p, 2.0 * lam_bar)


def lambda_bar(X: DesignMatrix) -> float:
    return lambda_range(X).lambda_bar


def default_lambda(X: DesignMatrix) -> float:
    """``||X|| / sqrt(n)`` clamped into the admissible range."""
    if X.p < 2:
        raise DomainError("default lambda needs p >= 2")
    rng = lambda_range(X)
    return min(max(X.x_norm / math.sqrt(X.n), rng.lower), rng.upper)


def laplace_l1_ball_probability(s: int, lam_r: float, terms: int | None = None) -> float:
    """``P(sum of s iid |Laplace(lam)| <= r)`` as the Poisson series
    ``exp(-lam r) sum_{k >= s} (lam r)^k / k!``, truncated when terms vanish."""
    if s == 0:
        return 1.0
    x = float(lam_r)
    log_term = -x + s * math.log(x) - math.lgamma(s + 1)
    total, k = 0.0, s
    limit = terms if terms is not None else 10_000
    while k - s < limit:
        t = math.exp(log_term)
        total += t
        if k > x and t < 1e-17 * total:
            break
        k += 1
        log_term += math.log(x) - math.log(k)
    return total
