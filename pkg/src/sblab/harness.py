"""Simulation harness: designs, truths, experiments and reports.

A run is fully determined by a flat key-value config. The design is drawn
once from stream ``(seed, 0)``; replication ``k`` draws its truth, noise and
posterior samples from stream ``(seed, 1, k)``. Reports contain no timings,
so identical configs give byte-identical ``report.json`` files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bvm, exact, lasso, mcmc, prediction
from .core import (DesignMatrix, Model, Observation, RngHandle, SparseCoef, as_design,
                   load_design, load_vector)
from .diagnostics import SolverConfig, diagnose
from .errors import ConfigError, DomainError, IoError
from .priors import (DimensionPrior, HeavyTailedSlab, LaplaceSlab, certify_dimension_prior,
                     default_lambda, lambda_range)

EXPERIMENTS = ("dimension", "recovery", "selection", "no_superset", "bvm", "coverage",
               "lasso_contrast", "predict_subspace", "diagnose")
DESIGNS = ("identity", "scaled_identity", "gaussian_iid", "equicorrelated", "ar_gram",
           "block_gram")

DEFAULTS = {
    "experiment": "recovery",
    "design.kind": "identity",
    "design.n": 100,
    "design.p": None,
    "design.sigma_n": 1.0,
    "design.r": 0.5,
    "design.rho": 0.5,
    "design.block_size": 2,
    "design.planted": 0,
    "truth.s0": 5,
    "truth.signal": "flat",
    "truth.A": 8.0,
    "truth.placement": "prefix",
    "truth.noiseless": False,
    "dim_prior.kind": "complexity",
    "dim_prior.a": 1.0,
    "dim_prior.c": 1.0,
    "dim_prior.u": 2.0,
    "slab.kind": "laplace",
    "slab.mu": 4.0,
    "lambda": "default",
    "replications": 10,
    "seed": 0,
    "engine": "auto",
    "s_max": None,
    "n_draws": 1000,
    "mcmc.n_sweeps": 20_000,
    "mcmc.burn_in": 2_000,
    "bvm.M": bvm.DEFAULT_M,
    "bvm.mc_draws": 20_000,
    "coverage.level": 0.975,
    "lasso.lambda": "default",
    "lasso.n_draws": 10_000,
    "lasso.delta": 0.1,
    "lasso.ss_radius": 5.0,
    "subspace.d": 4.0,
    "subspace.t_max": 4,
    "subspace.radius": 10.0,
    "subspace.oracle_check": True,
    "subspace.mcmc_sweeps": 4_000,
    "diagnose.s_max": 3,
    "data.design": None,
    "data.response": None,
}

CONSTANTS = {
    "cone_constant": SolverConfig().cone_constant,
    "solver_tol": SolverConfig().tol,
    "solver_max_iter": SolverConfig().max_iter,
    "subset_budget": SolverConfig().subset_budget,
    "enumeration_budget": exact.ENUM_BUDGET,
    "importance_draws": exact.IS_DRAWS,
    "importance_rel_se": exact.IS_REL_SE,
    "gibbs_burn_in": exact.BURN_IN,
    "rank_tol": exact.RANK_TOL,
    "bvm_M": bvm.DEFAULT_M,
    "dedup_tol": prediction.DEDUP_TOL,
    "subspace_rank_tol": prediction.RANK_TOL,
}


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

class ExperimentConfig:
    """Validated flat config; unknown keys are rejected.

    ``slab.lambda`` is accepted as a synonym of ``lambda``.
    """

    def __init__(self, values: dict | None = None):
        values = dict(values or {})
        if "slab.lambda" in values:
            alias = values.pop("slab.lambda")
            if "lambda" in values and values["lambda"] != alias:
                raise ConfigError("conflicting 'lambda' and 'slab.lambda'")
            values["lambda"] = alias
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        self.values = {**DEFAULTS, **values}
        self._validate()

    def __getitem__(self, key):
        return self.values[key]

    def _validate(self):
        v = self.values
        if v["experiment"] not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if v["design.kind"] not in DESIGNS:
            raise ConfigError(f"design.kind must be one of {DESIGNS}")
        for key in ("design.n", "replications"):
            if not isinstance(v[key], int) or v[key] < 1:
                raise ConfigError(f"{key} must be a positive integer")
        if v["design.p"] is not None and (not isinstance(v["design.p"], int) or v["design.p"] < 1):
            raise ConfigError("design.p must be a positive integer")
        for key in ("design.r", "design.rho"):
            if not 0.0 <= float(v[key]) < 1.0:
                raise ConfigError(f"{key} must lie in [0, 1)")
        if v["truth.signal"] not in ("flat", "decaying", "zero"):
            raise ConfigError("truth.signal must be flat, decaying or zero")
        if v["truth.placement"] not in ("prefix", "random"):
            raise ConfigError("truth.placement must be prefix or random")
        if not isinstance(v["truth.s0"], int) or v["truth.s0"] < 0:
            raise ConfigError("truth.s0 must be a nonnegative integer")
        if v["dim_prior.kind"] not in ("complexity", "beta_binomial"):
            raise ConfigError("dim_prior.kind must be complexity or beta_binomial")
        if v["slab.kind"] not in ("laplace", "heavy_tailed"):
            raise ConfigError("slab.kind must be laplace or heavy_tailed")
        if v["engine"] not in ("auto", "exact", "mcmc"):
            raise ConfigError("engine must be auto, exact or mcmc")
        lam = v["lambda"]
        if lam not in ("default", "range_lower") and not (
                isinstance(lam, (int, float)) and not isinstance(lam, bool) and lam > 0):
            raise ConfigError("lambda must be 'default', 'range_lower' or a positive number")
        if float(v["subspace.d"]) < 4:
            raise ConfigError("subspace.d must be >= 4")
        if not isinstance(v["seed"], int):
            raise ConfigError("seed must be an integer")

    def to_dict(self) -> dict:
        return dict(sorted(self.values.items()))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls(data)

    def with_updates(self, **kw) -> "ExperimentConfig":
        vals = {k: v for k, v in self.values.items() if v != DEFAULTS[k] or k in kw}
        vals.update({k.replace("__", "."): v for k, v in kw.items()})
        return ExperimentConfig(vals)


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------

def _gram_root(C: np.ndarray) -> np.ndarray:
    ev, V = np.linalg.eigh(C)
    if ev[0] < -1e-12 * max(1.0, ev[-1]):
        raise ConfigError("requested Gram matrix is not positive semidefinite")
    return (V * np.sqrt(np.clip(ev, 0.0, None))) @ V.T


def gram_matrix(cfg: ExperimentConfig) -> np.ndarray:
    kind = cfg["design.kind"]
    p = cfg["design.p"] or cfg["design.n"]
    if kind == "equicorrelated":
        r = float(cfg["design.r"])
        return (1 - r) * np.eye(p) + r * np.ones((p, p))
    if kind == "ar_gram":
        rho = float(cfg["design.rho"])
        i = np.arange(p)
        return rho ** np.abs(i[:, None] - i[None, :])
    if kind == "block_gram":
        b = int(cfg["design.block_size"])
        r = float(cfg["design.r"])
        if b < 1:
            raise ConfigError("design.block_size must be >= 1")
        blk = np.arange(p) // b
        same = blk[:, None] == blk[None, :]
        return np.where(same, r, 0.0) + (1 - r) * np.eye(p)
    raise ConfigError(f"{kind} is not a Gram-specified design")


def generate_design(cfg: ExperimentConfig, rng) -> DesignMatrix:
    kind = cfg["design.kind"]
    n = cfg["design.n"]
    p = cfg["design.p"]
    gen = rng.generator if isinstance(rng, RngHandle) else np.random.default_rng(rng)
    if kind in ("identity", "scaled_identity"):
        if p not in (None, n):
            raise ConfigError(f"{kind} design needs p = n")
        X = np.eye(n)
        if kind == "scaled_identity":
            X = X / float(cfg["design.sigma_n"])
    elif kind == "gaussian_iid":
        X = gen.standard_normal((n, p or n))
    else:
        if p not in (None, n):
            raise ConfigError(f"{kind} design forces p = n")
        X = math.sqrt(n) * _gram_root(gram_matrix(cfg))
    k = int(cfg["design.planted"])
    if k:
        s0 = cfg["truth.s0"]
        base = s0 - k
        if base < 1 or s0 > X.shape[1]:
            raise ConfigError("design.planted needs 0 < planted < truth.s0 <= p")
        # planted columns are random combinations of the first s0 - k columns
        W = gen.standard_normal((base, k))
        W /= np.linalg.norm(X[:, :base] @ W, axis=0) / np.linalg.norm(X[:, 0])
        X = X.copy()
        X[:, base:s0] = X[:, :base] @ W
    return DesignMatrix(X)


def generate_truth(cfg: ExperimentConfig, X: DesignMatrix, rng) -> SparseCoef:
    gen = rng.generator if isinstance(rng, RngHandle) else np.random.default_rng(rng)
    s0 = cfg["truth.s0"]
    if s0 > X.p:
        raise ConfigError(f"truth.s0 = {s0} exceeds p = {X.p}")
    if cfg["truth.signal"] == "zero" or s0 == 0:
        return SparseCoef.zero(X.p)
    scale = float(cfg["truth.A"]) * math.sqrt(math.log(X.p)) / X.x_norm
    if cfg["truth.placement"] == "prefix":
        idx = np.arange(s0)
    else:
        idx = np.sort(gen.choice(X.p, size=s0, replace=False))
    mag = np.full(s0, scale)
    if cfg["truth.signal"] == "decaying":
        mag = scale / np.arange(1, s0 + 1)
    signs = np.where(gen.random(s0) < 0.5, -1.0, 1.0)
    return SparseCoef(Model(tuple(idx)), signs * mag, X.p)


def simulate_observation(X: DesignMatrix, beta0: SparseCoef, rng, noiseless: bool = False) -> Observation:
    gen = rng.generator if isinstance(rng, RngHandle) else np.random.default_rng(rng)
    mean = X.entries @ beta0.to_dense()
    if noiseless:
        return Observation(mean)
    return Observation(mean + gen.standard_normal(X.n))


def noise_event_frequency(X, reps: int, rng) -> tuple:
    """Frequency of ``||X'eps||_inf > 2 sqrt(log p) ||X||`` for standard normal noise."""
    X = as_design(X)
    gen = rng.generator if isinstance(rng, RngHandle) else np.random.default_rng(rng)
    thr = 2.0 * math.sqrt(math.log(X.p)) * X.x_norm
    eps = gen.standard_normal((reps, X.n))
    hits = np.abs(eps @ X.entries).max(axis=1) > thr
    f = float(hits.mean())
    return f, 2.0 / X.p, math.sqrt((2.0 / X.p) * (1 - 2.0 / X.p) / reps)


# ---------------------------------------------------------------------------
# priors and posterior from a config
# ---------------------------------------------------------------------------

def build_priors(cfg: ExperimentConfig, X: DesignMatrix):
    p = X.p
    if cfg["dim_prior.kind"] == "complexity":
        dp = DimensionPrior.complexity(p, float(cfg["dim_prior.a"]), float(cfg["dim_prior.c"]))
    else:
        dp = DimensionPrior.beta_binomial(p, float(cfg["dim_prior.u"]))
    lam = cfg["lambda"]
    if lam == "default":
        lam = default_lambda(X)
    elif lam == "range_lower":
        lam = lambda_range(X).lower
    else:
        lam = float(lam)
    if cfg["slab.kind"] == "laplace":
        slab = LaplaceSlab(lam)
    else:
        slab = HeavyTailedSlab(lam, float(cfg["slab.mu"]))
    return dp, slab


def fit_posterior(cfg: ExperimentConfig, X, y, dp, slab, rng: RngHandle):
    """Sequence fast path, enumeration or MCMC, according to ``engine``."""
    engine = cfg["engine"]
    if engine in ("auto", "exact") and X.identity_scale is not None and isinstance(slab, LaplaceSlab):
        return exact.SequencePosterior.from_design(X, y, dp, slab)
    if engine == "mcmc":
        ch = mcmc.ChainConfig(cfg["mcmc.n_sweeps"], cfg["mcmc.burn_in"], rng=rng)
        return mcmc.run_mcmc(X, y, dp, slab, cfg=ch)
    return exact.enumerate_posterior(X, y, dp, slab, s_max=cfg["s_max"])


def posterior_draws(post, X, y, rng: RngHandle, n_draws: int) -> np.ndarray:
    if isinstance(post, mcmc.ChainOutput):
        dense = post.to_dense()
        idx = np.linspace(0, dense.shape[0] - 1, min(n_draws, dense.shape[0])).astype(int)
        return dense[idx]
    return exact.sample_posterior_array(post, X, y, rng, n_draws)


def _dim_tail(post, k) -> float:
    if isinstance(post, mcmc.ChainOutput):
        return float(np.mean(post.sizes > k))
    return exact.dimension_tail(post, k)


def _map(post) -> Model:
    if isinstance(post, mcmc.ChainOutput):
        counts = post.visit_counts()
        best = max(counts.values())
        return min((m for m, c in counts.items() if c == best), key=lambda m: (m.s, m.indices))
    return exact.map_model(post)


def _superset_mass(post, S0: Model) -> float:
    if isinstance(post, exact.SequencePosterior):
        return post.superset_mass(S0)
    s0 = set(S0.indices)
    if isinstance(post, mcmc.ChainOutput):
        return float(np.mean([s0 < set(s) for s in post.supports]))
    return float(sum(w for m, w in zip(post.models, post.weights) if s0 < set(m.indices)))


def _model_mass(post, S0: Model) -> float:
    if isinstance(post, exact.SequencePosterior):
        return math.exp(post.log_weight(S0))
    if isinstance(post, mcmc.ChainOutput):
        return float(np.mean([s == S0.indices for s in post.supports]))
    return post.weight_of(S0)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _losses(draws: np.ndarray, X: DesignMatrix, b0: np.ndarray) -> dict:
    D = draws - b0
    pred = D @ X.entries.T
    return {
        "l1_loss": float(np.abs(D).sum(axis=1).mean()),
        "l2_loss": float(np.sqrt((D ** 2).sum(axis=1)).mean()),
        "linf_loss": float(np.abs(D).max(axis=1).mean()),
        "pred_loss": float(np.sqrt((pred ** 2).sum(axis=1)).mean()),
    }


def _rep_dimension(ctx, k, rng):
    post, b0 = ctx["post"], ctx["beta0"]
    s0 = b0.s
    return {"tail_s0": _dim_tail(post, s0), "tail_2s0": _dim_tail(post, 2 * s0),
            "tail_3s0": _dim_tail(post, 3 * s0)}


def _rep_recovery(ctx, k, rng):
    post, b0, X, y = ctx["post"], ctx["beta0"], ctx["X"], ctx["y"]
    draws = posterior_draws(post, X, y, rng.child(1), ctx["cfg"]["n_draws"])
    out = _rep_dimension(ctx, k, rng)
    out.update(_losses(draws, X, b0.to_dense()))
    return out


def _rep_selection(ctx, k, rng):
    post, b0 = ctx["post"], ctx["beta0"]
    return {"map_is_s0": float(_map(post) == b0.model),
            "superset_mass": _superset_mass(post, b0.model),
            "s0_mass": _model_mass(post, b0.model)}


def _rep_no_superset(ctx, k, rng):
    return {"superset_mass": _superset_mass(ctx["post"], ctx["beta0"].model)}


def _rep_bvm(ctx, k, rng):
    cfg, X, y, b0, dp, slab, post = (ctx[x] for x in ("cfg", "X", "y", "beta0", "dp", "slab",
                                                        "post"))
    if not isinstance(post, exact.ModelPosterior):
        raise DomainError("the bvm experiment needs the enumeration engine")
    A4 = certify_dimension_prior(dp).A4
    nb = bvm.build_neighborhood(b0, X, A4, float(cfg["bvm.M"]))
    mix = bvm.bvm_weights(X, y, dp, slab.lam, nb)
    flat = bvm.flat_prior_log_weights(X, y, dp, slab.lam, mix.members)
    tv = bvm.tv_upper_bound(post, mix, bvm.TVConfig(mc_draws=cfg["bvm.mc_draws"], seed=k))
    return {"tv_bound": float(tv.value), "tv_se": tv.se, "tv_weight_part": float(tv.weight_part),
            "mixture_s0_weight": mix.weight_of(b0.model),
            "weight_identity_err": float(np.max(np.abs(np.expm1(flat - mix.log_w))))}


def _rep_coverage(ctx, k, rng):
    cfg, post, b0, X, y = (ctx[x] for x in ("cfg", "post", "beta0", "X", "y"))
    level = float(cfg["coverage.level"])
    dense = b0.to_dense()
    if isinstance(post, exact.SequencePosterior):
        src = post
    else:
        src = posterior_draws(post, X, y, rng.child(1), max(cfg["n_draws"], exact.MIN_DRAWS))
    mp = post if isinstance(post, exact.ModelPosterior) else None
    S0 = list(b0.model.indices)
    out = {}
    for r, j in enumerate(S0):
        out[f"cover_{r}"] = float(dense[j] <= exact.credible_limit(src, j, level, mp=mp).R_hat)
    members = set(S0)
    zero = []
    for j in range(X.p):
        if j not in members:
            zero.append(exact.credible_limit(src, j, level, mp=mp).R_hat == 0.0)
            out[f"zero_{j}"] = float(zero[-1])
    out["null_zero_frac"] = float(np.mean(zero)) if zero else 1.0
    out["null_nonzero_count"] = float(len(zero) - int(np.sum(zero)))
    return out


def _rep_lasso(ctx, k, rng):
    cfg, X, y, post = (ctx[x] for x in ("cfg", "X", "y", "post"))
    n = X.n
    lam_n = cfg["lasso.lambda"]
    lam_n = math.sqrt(2.0 * math.log(n)) if lam_n == "default" else float(lam_n)
    if X.identity_scale != 1.0:
        raise DomainError("the LASSO contrast is defined for the sequence model X = I")
    draws = lasso.lasso_posterior_sample_seq(y, lam_n, rng.child(1), cfg["lasso.n_draws"])
    radius = float(cfg["lasso.delta"]) * math.sqrt(n) * min(1.0 / lam_n, 1.0)
    lasso_mass, lasso_se = lasso.small_ball_mass(draws, radius)
    ss = posterior_draws(post, X, y, rng.child(2), cfg["lasso.n_draws"])
    ss_radius = float(cfg["lasso.ss_radius"]) * math.sqrt(math.log(n))
    ss_mass, ss_se = lasso.small_ball_mass(ss, ss_radius)
    fit = lasso.lasso_fit(X, y, lam_n)
    return {"lasso_ball_mass": lasso_mass, "lasso_ball_se": lasso_se, "lasso_radius": radius,
            "spike_slab_ball_mass": ss_mass, "spike_slab_ball_se": ss_se,
            "spike_slab_radius": ss_radius,
            "lasso_mode_norm": float(np.linalg.norm(fit.beta_hat))}


def _rep_subspace(ctx, k, rng):
    cfg, X, y, b0, fam = (ctx[x] for x in ("cfg", "X", "y", "beta0", "family"))
    sp = prediction.subspace_posterior(fam, y, float(cfg["subspace.d"]))
    gam = prediction.subspace_predict_sample(sp, y, rng.child(1), cfg["n_draws"])
    mean0 = X.entries @ b0.to_dense()
    t0 = prediction.true_subspace_dim(X, b0)
    thr = float(cfg["subspace.radius"]) * max(t0, 1) * math.log(X.p)
    err = ((gam - mean0) ** 2).sum(axis=1)
    out = {"t0": float(t0), "s0": float(b0.s), "within_radius": float(np.mean(err <= thr)),
           "mean_sq_error": float(err.mean()),
           "map_dim": float(np.argmax(sp.dimension_posterior()))}
    if cfg["subspace.oracle_check"]:
        ht = HeavyTailedSlab(X.x_norm, float(cfg["slab.mu"]))
        dp = ctx["dp"]
        ch = mcmc.ChainConfig(cfg["subspace.mcmc_sweeps"], cfg["subspace.mcmc_sweeps"] // 5,
                              rng=rng.child(2))
        out8 = mcmc.run_mcmc(X, y, dp, ht, cfg=ch)
        pred = out8.to_dense() @ X.entries.T - mean0
        dist = np.sqrt((pred ** 2).sum(axis=1))
        lc = prediction.log_c_pi(dp)
        lD = prediction.log_D(b0, ht, X, dp)
        for r in (1, 4):
            out[f"oracle_exceed_r{r}"] = float(np.mean(dist > prediction.oracle_radius(lc, lD, r)))
    return out


def _rep_diagnose(ctx, k, rng):
    cfg, X = ctx["cfg"], ctx["X"]
    rep = diagnose(X, int(cfg["diagnose.s_max"]))
    out = {"mc": rep.mc}
    for s, v in rep.phi_bar.items():
        out[f"phi_bar_{s}"] = v
    for s, v in rep.phi_tilde.items():
        out[f"phi_tilde_{s}"] = v
    return out


_RUNNERS = {
    "dimension": _rep_dimension, "recovery": _rep_recovery, "selection": _rep_selection,
    "no_superset": _rep_no_superset, "bvm": _rep_bvm, "coverage": _rep_coverage,
    "lasso_contrast": _rep_lasso, "predict_subspace": _rep_subspace, "diagnose": _rep_diagnose,
}

_NEEDS_POSTERIOR = {"dimension", "recovery", "selection", "no_superset", "bvm", "coverage",
                    "lasso_contrast"}


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    records: list
    aggregates: dict
    constants: dict = field(default_factory=lambda: dict(CONSTANTS))
    design: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "config": self.config, "constants": self.constants,
                "design": self.design, "records": self.records, "aggregates": self.aggregates}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def aggregate(records: list) -> dict:
    """Mean and standard error of every statistic over replications."""
    keys = sorted({k for r in records for k in r if k != "rep"})
    out = {}
    for k in keys:
        vals = np.array([r[k] for r in records if k in r], dtype=float)
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[k] = {"mean": float(vals.mean()), "se": se, "n": int(vals.size)}
    return out


def _load_data(cfg):
    X = load_design(cfg["data.design"])
    y = load_vector(cfg["data.response"]) if cfg["data.response"] else None
    return X, y


def make_instance(cfg: ExperimentConfig, rep: int = 0):
    """Design, truth and response for replication ``rep``.

    With ``data.design`` set, the design comes from file; with ``data.response``
    also set, the truth is unknown and returned as ``None``.
    """
    root = RngHandle(int(cfg["seed"]))
    if cfg["data.design"]:
        X, y = _load_data(cfg)
        if y is not None:
            if y.shape[0] != X.n:
                raise ConfigError(f"response has {y.shape[0]} rows, design has {X.n}")
            return X, None, y
    else:
        X = generate_design(cfg, root.child(0))
    rng = root.child(1).child(rep)
    b0 = generate_truth(cfg, X, rng.child(0))
    y = simulate_observation(X, b0, rng.child(3), bool(cfg["truth.noiseless"])).y
    return X, b0, y


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    root = RngHandle(int(cfg["seed"]))
    if cfg["data.design"]:
        X, _ = _load_data(cfg)
    else:
        X = generate_design(cfg, root.child(0))
    dp, slab = build_priors(cfg, X)
    exp_name = cfg["experiment"]
    shared = {"cfg": cfg, "X": X, "dp": dp, "slab": slab}
    if exp_name == "predict_subspace":
        shared["family"] = prediction.enumerate_subspaces(X, int(cfg["subspace.t_max"]))
    runner = _RUNNERS[exp_name]
    timings = {}

    def one(k):
        t0 = time.perf_counter()
        rng = root.child(1).child(k)
        b0 = generate_truth(cfg, X, rng.child(0))
        y = simulate_observation(X, b0, rng.child(3), bool(cfg["truth.noiseless"])).y
        ctx = dict(shared, beta0=b0, y=y)
        if exp_name in _NEEDS_POSTERIOR:
            ctx["post"] = fit_posterior(cfg, X, y, dp, slab, rng.child(4))
        rec = {"rep": k, **runner(ctx, k, rng)}
        timings[k] = time.perf_counter() - t0
        return rec

    reps = range(cfg["replications"])
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(one, reps))
    else:
        records = [one(k) for k in reps]
    design = {"n": X.n, "p": X.p, "x_norm": X.x_norm, "lambda": slab.lam}
    return ExperimentReport(exp_name, cfg.to_dict(), records, aggregate(records),
                            design=design, timings=timings)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

PLOT_COLUMNS = ("experiment", "rep", "stat", "value")


def plotdata_text(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for rec in report.records:
        for k in sorted(rec):
            if k != "rep":
                w.writerow([report.experiment, rec["rep"], k, repr(float(rec[k]))])
    return buf.getvalue()


def emit_plotdata(report: ExperimentReport, path) -> Path:
    """Long-format CSV with columns ``experiment, rep, stat, value``."""
    path = Path(path)
    try:
        path.write_text(plotdata_text(report))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
    return path


def read_plotdata(path) -> dict:
    """Parse an emitted plot-data file back into per-statistic value lists."""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["stat"], []).append(float(row["value"]))
    return out


def records_text(report: ExperimentReport) -> str:
    keys = sorted({k for r in report.records for k in r if k != "rep"})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rep", *keys])
    for r in report.records:
        w.writerow([r["rep"], *[repr(float(r[k])) if k in r else "" for k in keys]])
    return buf.getvalue()


def write_report(report: ExperimentReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.dumps() + "\n")
    (out / "records.csv").write_text(records_text(report))
    emit_plotdata(report, out / "plotdata.csv")
    (out / "timings.json").write_text(json.dumps(
        {str(k): v for k, v in sorted(report.timings.items())}, indent=2) + "\n")
    return out
