"""Trans-dimensional Metropolis-Hastings for the spike-and-slab posterior.

One sweep is a birth, death or swap proposal on the support followed by a
Gibbs sweep over the active coefficients. A newborn coefficient is drawn from
its full conditional given the current residual (the two-piece normal for a
Laplace slab), so the acceptance ratio of a birth reduces to a ratio of
one-coordinate marginal likelihoods and does not depend on the drawn value.
For other slabs the newborn value is proposed from the Gaussian part of the
conditional and the slab enters the ratio.

Supports whose design columns are numerically dependent carry no mass, the
same convention as the enumeration engine; proposals into them are rejected
and counted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import truncnorm
from .core import Model, RngHandle, SparseCoef, as_design, as_generator
from .errors import DomainError, MixingWarning
from .exact import RANK_TOL, _y, conditional_draw
from .priors import DimensionPrior, LaplaceSlab, log_binom

MOVES = ("add", "delete", "swap")


@dataclass
class ChainConfig:
    n_sweeps: int = 10_000
    burn_in: int = 1_000
    thin: int = 1
    move_probs: tuple = (0.4, 0.4, 0.2)
    rng: RngHandle = field(default_factory=lambda: RngHandle(0))
    init: tuple = ()

    def __post_init__(self):
        mp = np.asarray(self.move_probs, dtype=float)
        if mp.shape != (3,) or np.any(mp < 0) or abs(mp.sum() - 1.0) > 1e-12:
            raise DomainError("move_probs must be three nonnegative numbers summing to 1")
        if not 0 <= self.burn_in < self.n_sweeps:
            raise DomainError("need 0 <= burn_in < n_sweeps")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")


@dataclass
class ChainOutput:
    p: int
    supports: list
    values: list
    sizes: np.ndarray
    proposed: dict
    accepted: dict
    rank_rejections: int = 0

    @property
    def acceptance(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else float("nan"))
                for k in MOVES}

    @property
    def states(self) -> list:
        return [SparseCoef(Model(s), v, self.p) for s, v in zip(self.supports, self.values)]

    def visit_counts(self) -> dict:
        out: dict = {}
        for s in self.supports:
            m = Model(s)
            out[m] = out.get(m, 0) + 1
        return out

    def visit_frequencies(self) -> dict:
        n = len(self.supports)
        return {m: c / n for m, c in self.visit_counts().items()}

    def inclusion_trace(self) -> np.ndarray:
        out = np.zeros((len(self.supports), self.p), dtype=bool)
        for t, s in enumerate(self.supports):
            out[t, list(s)] = True
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros((len(self.supports), self.p))
        for t, (s, v) in enumerate(zip(self.supports, self.values)):
            out[t, list(s)] = v
        return out


class _Target:
    """Pieces of the posterior shared by the sampler and the exact kernel."""

    def __init__(self, X, y, dp: DimensionPrior, slab):
        self.X = as_design(X)
        self.y = _y(y)
        self.A = self.X.entries
        self.G = self.X.gram
        self.diag = np.diag(self.G).copy()
        self.slab = slab
        self.p = self.X.p
        self.cap = min(self.X.n, self.p)
        ks = np.arange(self.p + 1)
        self.log_size = dp.log_weights - log_binom(self.p, ks)
        self.laplace = isinstance(slab, LaplaceSlab)

    def full_rank_with(self, S: list, j: int) -> bool:
        if not S:
            return self.diag[j] > RANK_TOL * self.X.x_norm ** 2
        idx = S + [j]
        ev = np.linalg.eigvalsh(self.G[np.ix_(idx, idx)])
        return ev[0] > RANK_TOL * self.X.x_norm ** 2

    def conditional(self, j, r):
        v = 1.0 / self.diag[j]
        return (self.A[:, j] @ r) * v, v

    def birth_term(self, m, v, b=None):
        """``log`` of target gain over proposal density for a newborn coefficient."""
        base = 0.5 * m * m / v
        if self.laplace:
            return base + self.slab.log_normalizer + truncnorm.log_normalizer(m, v, self.slab.lam)
        return base + 0.5 * (truncnorm.LOG_2PI + math.log(v)) + self.slab.log_density(b)

    def propose_value(self, m, v, gen):
        if self.laplace:
            return float(truncnorm.sample_two_piece(m, v, self.slab.lam, gen))
        return m + math.sqrt(v) * gen.standard_normal()


def _log_move(pm, move, s, p):
    """log probability of choosing a specific proposal of type ``move`` from size ``s``."""
    if move == "add":
        return math.log(pm[0]) - math.log(p - s)
    if move == "delete":
        return math.log(pm[1]) - math.log(s)
    return math.log(pm[2]) - math.log(s) - math.log(p - s)


def run_mcmc(X, y, dp: DimensionPrior, slab, lam: float | None = None,
             cfg: ChainConfig | None = None) -> ChainOutput:
    cfg = cfg or ChainConfig()
    if lam is not None:
        slab = slab.with_lambda(lam)
    tg = _Target(X, y, dp, slab)
    gen = as_generator(cfg.rng)
    pm = tuple(float(x) for x in cfg.move_probs)
    p, A = tg.p, tg.A
    S = sorted(int(i) for i in cfg.init)
    beta = {j: float(np.linalg.lstsq(A[:, S], tg.y, rcond=None)[0][k]) for k, j in enumerate(S)} \
        if S else {}
    r = tg.y - (A[:, S] @ np.array([beta[j] for j in S]) if S else 0.0)
    proposed = {k: 0 for k in MOVES}
    accepted = {k: 0 for k in MOVES}
    rank_rej = 0
    supports, values, sizes = [], [], []
    cum = np.cumsum(pm)
    for sweep in range(cfg.n_sweeps):
        s = len(S)
        move = MOVES[int(np.searchsorted(cum, gen.random(), side="right").clip(0, 2))]
        valid = ((move == "add" and s < tg.cap) or (move == "delete" and s > 0)
                 or (move == "swap" and 0 < s < p and pm[2] > 0))
        if valid:
            proposed[move] += 1
            in_set = set(S)
            if move == "add":
                j = int(gen.choice([k for k in range(p) if k not in in_set]))
                if not tg.full_rank_with(S, j):
                    rank_rej += 1
                else:
                    m, v = tg.conditional(j, r)
                    b = tg.propose_value(m, v, gen)
                    log_a = (tg.log_size[s + 1] - tg.log_size[s] + tg.birth_term(m, v, b)
                             + _log_move(pm, "delete", s + 1, p) - _log_move(pm, "add", s, p))
                    if math.log(gen.random()) < log_a and b != 0.0:
                        S = sorted(S + [j])
                        beta[j] = b
                        r = r - A[:, j] * b
                        accepted[move] += 1
            elif move == "delete":
                j = S[int(gen.integers(s))]
                bj = beta[j]
                r_new = r + A[:, j] * bj
                m, v = tg.conditional(j, r_new)
                log_a = -(tg.log_size[s] - tg.log_size[s - 1] + tg.birth_term(m, v, bj)
                          + _log_move(pm, "delete", s, p) - _log_move(pm, "add", s - 1, p))
                if math.log(gen.random()) < log_a:
                    S.remove(j)
                    del beta[j]
                    r = r_new
                    accepted[move] += 1
            else:
                j = S[int(gen.integers(s))]
                k = int(gen.choice([i for i in range(p) if i not in in_set]))
                rest = [i for i in S if i != j]
                if not tg.full_rank_with(rest, k):
                    rank_rej += 1
                else:
                    bj = beta[j]
                    r_mid = r + A[:, j] * bj
                    mj, vj = tg.conditional(j, r_mid)
                    mk, vk = tg.conditional(k, r_mid)
                    b = tg.propose_value(mk, vk, gen)
                    log_a = tg.birth_term(mk, vk, b) - tg.birth_term(mj, vj, bj)
                    if math.log(gen.random()) < log_a and b != 0.0:
                        S = sorted(rest + [k])
                        del beta[j]
                        beta[k] = b
                        r = r_mid - A[:, k] * b
                        accepted[move] += 1
        # within-model Gibbs sweep
        for j in S:
            r = r + A[:, j] * beta[j]
            m, v = tg.conditional(j, r)
            bj = float(conditional_draw(m, v, slab, beta[j], gen))
            if bj == 0.0:
                bj = beta[j]
            beta[j] = bj
            r = r - A[:, j] * bj
        if sweep >= cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0:
            supports.append(tuple(S))
            values.append(np.array([beta[j] for j in S]))
            sizes.append(len(S))
    total_prop = sum(proposed.values())
    if cfg.n_sweeps >= 1000 and total_prop and sum(accepted.values()) < 1e-3 * total_prop:
        warnings.warn("more than 99.9% of support moves were rejected", MixingWarning,
                      stacklevel=2)
    return ChainOutput(p, supports, values, np.array(sizes), proposed, accepted, rank_rej)


def run_chains(X, y, dp, slab, cfg: ChainConfig, n_chains: int = 2, lam=None) -> list:
    """Independent chains on child streams of ``cfg.rng``."""
    out = []
    for c in range(n_chains):
        sub = ChainConfig(cfg.n_sweeps, cfg.burn_in, cfg.thin, cfg.move_probs, cfg.rng.child(c),
                          cfg.init)
        out.append(run_mcmc(X, y, dp, slab, lam, sub))
    return out


def model_transition_probs(X, y, dp, slab: LaplaceSlab, S, beta_S,
                           move_probs=(0.4, 0.4, 0.2)) -> dict:
    """Exact probabilities of the next support given the state ``(S, beta_S)``.

    Only for the Laplace slab, where acceptance does not depend on the
    proposed value. The within-model Gibbs sweep leaves the support unchanged.
    """
    tg = _Target(X, y, dp, slab)
    if not tg.laplace:
        raise DomainError("exact model transitions need a Laplace slab")
    pm = tuple(float(x) for x in move_probs)
    S = sorted(int(i) for i in S)
    beta = dict(zip(S, np.asarray(beta_S, dtype=float)))
    A, p, s = tg.A, tg.p, len(S)
    r = tg.y - (A[:, S] @ np.array([beta[j] for j in S]) if S else 0.0)
    out: dict = {}

    def put(m, prob):
        out[m] = out.get(m, 0.0) + prob

    here = Model(tuple(S))
    outside = [k for k in range(p) if k not in set(S)]
    if s < tg.cap:
        for j in outside:
            prob_prop = math.exp(_log_move(pm, "add", s, p))
            if not tg.full_rank_with(S, j):
                put(here, prob_prop)
                continue
            m, v = tg.conditional(j, r)
            log_a = (tg.log_size[s + 1] - tg.log_size[s] + tg.birth_term(m, v)
                     + _log_move(pm, "delete", s + 1, p) - _log_move(pm, "add", s, p))
            a = math.exp(min(0.0, log_a))
            put(Model.of(S + [j]), prob_prop * a)
            put(here, prob_prop * (1 - a))
    else:
        put(here, pm[0])
    if s > 0:
        for j in S:
            prob_prop = math.exp(_log_move(pm, "delete", s, p))
            r_new = r + A[:, j] * beta[j]
            m, v = tg.conditional(j, r_new)
            log_a = -(tg.log_size[s] - tg.log_size[s - 1] + tg.birth_term(m, v)
                      + _log_move(pm, "delete", s, p) - _log_move(pm, "add", s - 1, p))
            a = math.exp(min(0.0, log_a))
            put(Model(tuple(i for i in S if i != j)), prob_prop * a)
            put(here, prob_prop * (1 - a))
    else:
        put(here, pm[1])
    if 0 < s < p and pm[2] > 0:
        for j in S:
            rest = [i for i in S if i != j]
            r_mid = r + A[:, j] * beta[j]
            mj, vj = tg.conditional(j, r_mid)
            for k in outside:
                prob_prop = math.exp(_log_move(pm, "swap", s, p))
                if not tg.full_rank_with(rest, k):
                    put(here, prob_prop)
                    continue
                mk, vk = tg.conditional(k, r_mid)
                a = math.exp(min(0.0, tg.birth_term(mk, vk) - tg.birth_term(mj, vj)))
                put(Model.of(rest + [k]), prob_prop * a)
                put(here, prob_prop * (1 - a))
    else:
        put(here, pm[2])
    return out


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def effective_sample_size(x) -> float:
    """ESS from Geyer's initial positive sequence of autocorrelations.

    A constant series returns 1.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        return float(n)
    xc = x - x.mean()
    var = float(xc @ xc) / n
    if var <= 1e-300:
        return 1.0
    f = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    rho = acov / var
    total = 0.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        total += pair
    tau = max(2.0 * total - 1.0, 1.0 / n)
    return float(min(n / tau, n))


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction for scalar traces."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        h = c.shape[0] // 2
        halves += [c[:h], c[h: 2 * h]]
    L = min(h.shape[0] for h in halves)
    H = np.array([h[:L] for h in halves])
    W = H.var(axis=1, ddof=1).mean()
    B = L * H.mean(axis=1).var(ddof=1)
    if W <= 1e-300:
        return 1.0 if B <= 1e-300 else float("inf")
    var_plus = (L - 1) / L * W + B / L
    return float(math.sqrt(var_plus / W))


def chain_diagnostics(outputs) -> dict:
    """ESS of ``|S|`` and of each inclusion indicator, split R-hat and acceptance rates."""
    if isinstance(outputs, ChainOutput):
        outputs = [outputs]
    rep: dict = {"n_chains": len(outputs)}
    rep["ess_size"] = float(sum(effective_sample_size(o.sizes) for o in outputs))
    incl = [o.inclusion_trace() for o in outputs]
    p = outputs[0].p
    rep["ess_inclusion"] = [float(sum(effective_sample_size(t[:, j]) for t in incl))
                            for j in range(p)]
    if len(outputs) >= 2:
        rep["rhat_size"] = split_rhat([o.sizes for o in outputs])
    else:
        warnings.warn("split R-hat needs at least two chains", MixingWarning, stacklevel=2)
        rep["rhat_size"] = None
    prop = {k: sum(o.proposed[k] for o in outputs) for k in MOVES}
    acc = {k: sum(o.accepted[k] for o in outputs) for k in MOVES}
    rep["acceptance"] = {k: (acc[k] / prop[k] if prop[k] else None) for k in MOVES}
    rep["rank_rejections"] = int(sum(o.rank_rejections for o in outputs))
    return rep


def visit_tv(out, mp) -> float:
    """Total variation between chain visit frequencies and enumerated weights."""
    freq = out.visit_frequencies() if isinstance(out, ChainOutput) else out
    w = dict(zip(mp.models, mp.weights))
    keys = set(freq) | set(w)
    return 0.5 * sum(abs(freq.get(k, 0.0) - w.get(k, 0.0)) for k in keys)
