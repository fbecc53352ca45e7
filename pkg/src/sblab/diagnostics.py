"""Recoverability indices of a design matrix.

* ``mutual_coherence``: largest absolute column correlation.
* ``compatibility``: the compatibility number of a support over the cone
  ``||b_{S^c}||_1 <= 7 ||b_S||_1``.
* ``uniform_compatibility``: the same ratio over all vectors with at most ``s``
  nonzeros.
* ``sparse_singular``: smallest singular value of ``s``-column submatrices.

All indices are scaled by ``||X||`` (largest column norm) and are therefore
invariant under ``X -> t X``.

The compatibility infimum is piecewise convex in the sign orthants of ``b_S``.
Fixing a sign pattern turns it into a convex quadratic program over the
product of a simplex and an l1 ball, solved here by accelerated projected
gradient with a gradient-mapping stopping rule. The uniform index only
involves simplices, so every face is solved in closed form instead.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Model, as_design
from .errors import ComplexityRefused, DegenerateDesign, DomainError, SolverError
from .priors import lambda_bar


@dataclass
class SolverConfig:
    max_s: int = 12
    tol: float = 1e-7
    max_iter: int = 100_000
    cone_constant: float = 7.0
    subset_budget: int = 1_000_000


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project_simplex(V: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Row-wise Euclidean projection onto ``{w >= 0, sum w = radius}``."""
    V = np.atleast_2d(V)
    k = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - radius
    ind = np.arange(1, k + 1)
    cond = U - css / ind > 0
    rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(V.shape[0]), rho] / (rho + 1)
    return np.maximum(V - theta[:, None], 0.0)


def project_l1_ball(V: np.ndarray, radius: float) -> np.ndarray:
    """Row-wise Euclidean projection onto ``{||w||_1 <= radius}``."""
    V = np.atleast_2d(V)
    out = V.copy()
    over = np.abs(V).sum(axis=1) > radius
    if np.any(over):
        W = V[over]
        out[over] = np.sign(W) * project_simplex(np.abs(W), radius)
    return out


def sign_patterns(k: int) -> np.ndarray:
    """All sign vectors of length ``k`` with first entry ``+1`` (``b -> -b`` symmetry)."""
    if k == 0:
        return np.ones((1, 0))
    rest = np.array(list(itertools.product((1.0, -1.0), repeat=k - 1)), dtype=float)
    return np.hstack([np.ones((rest.shape[0], 1)), rest.reshape(rest.shape[0], k - 1)])


# ---------------------------------------------------------------------------
# mutual coherence
# ---------------------------------------------------------------------------

def mutual_coherence(X) -> float:
    X = as_design(X)
    if X.p < 2:
        raise DomainError("mutual coherence needs p >= 2")
    if np.any(X.col_norms == 0):
        raise DegenerateDesign("zero column in design")
    C = X.gram / np.outer(X.col_norms, X.col_norms)
    np.fill_diagonal(C, 0.0)
    return float(min(np.abs(C).max(), 1.0))


# ---------------------------------------------------------------------------
# compatibility number of a support
# ---------------------------------------------------------------------------

def _cone_qp(G: np.ndarray, S: np.ndarray, signs: np.ndarray, cone: float,
             tol: float, max_iter: int):
    """Minimize ``b' G b / 2`` over each sign pattern's feasible set.

    Rows of the iterate are independent problems; returns the objective per
    pattern, the final iterates, and the largest gradient-mapping residual.
    """
    p = G.shape[0]
    P = signs.shape[0]
    mask = np.zeros(p, dtype=bool)
    mask[S] = True
    Sc = np.flatnonzero(~mask)
    L = float(np.linalg.eigvalsh(G)[-1])
    if L <= 0:
        return np.zeros(P), np.zeros((P, p)), 0.0
    step = 1.0 / L

    def proj(B):
        out = np.empty_like(B)
        out[:, S] = signs * project_simplex(B[:, S] * signs)
        if Sc.size:
            out[:, Sc] = project_l1_ball(B[:, Sc], cone)
        return out

    x = np.zeros((P, p))
    x[:, S] = signs / len(S)
    y = x.copy()
    t = np.ones(P)
    resid = np.inf
    for it in range(1, max_iter + 1):
        x_new = proj(y - step * (y @ G))
        # gradient-based adaptive restart, per row
        restart = np.einsum("ij,ij->i", y - x_new, x_new - x) > 0
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = np.where(restart, 0.0, (t - 1.0) / t_new)
        t = np.where(restart, 1.0, t_new)
        y = x_new + mom[:, None] * (x_new - x)
        x = x_new
        if it % 25 == 0 or it == max_iter:
            gm = L * (x - proj(x - step * (x @ G)))
            resid = float(np.sqrt((gm ** 2).sum(axis=1)).max())
            if resid <= tol:
                break
    fx = 0.5 * np.einsum("ij,jk,ik->i", x, G, x)
    return fx, x, resid


def compatibility(X, S, cfg: SolverConfig | None = None) -> float:
    """Compatibility number of the support ``S``.

    Scale-normalizing ``||b_S||_1 = 1`` and fixing the sign pattern of ``b_S``
    leaves a convex program per pattern; the value is
    ``sqrt(min_patterns ||X b||^2) * sqrt(|S|) / ||X||``.
    """
    cfg = cfg or SolverConfig()
    X = as_design(X)
    S = np.asarray(list(S.indices if isinstance(S, Model) else S), dtype=int)
    s = S.size
    if s < 1:
        raise DomainError("compatibility needs a non-empty support")
    if s > cfg.max_s:
        raise ComplexityRefused(f"|S| = {s} exceeds max_s = {cfg.max_s}", needed=s,
                                budget=cfg.max_s)
    G = X.gram / X.x_norm ** 2
    signs = sign_patterns(s)
    f, _, resid = _cone_qp(G, S, signs, cfg.cone_constant, cfg.tol, cfg.max_iter)
    best = float(max(f.min(), 0.0))
    value = math.sqrt(2.0 * best) * math.sqrt(s)
    if resid > cfg.tol:
        raise SolverError(f"compatibility solver stalled (KKT residual {resid:.3g})",
                          bound=value)
    return value


# ---------------------------------------------------------------------------
# sparse indices (exhaustive over supports)
# ---------------------------------------------------------------------------

def _combinations(p: int, k: int, chunk: int = 100_000):
    it = itertools.combinations(range(p), k)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=int)


def _check_budget(p: int, s: int, budget: int, per_subset=lambda k: 1):
    need = sum(math.comb(p, k) * per_subset(k) for k in range(1, s + 1))
    if need > budget:
        raise ComplexityRefused(
            f"exhaustive search over supports of size <= {s} with p = {p} needs {need} "
            f"evaluations (budget {budget})", needed=need, budget=budget)


_SINGULAR = 1e-13


def _uniform_block(Gn: np.ndarray, idx: np.ndarray, signs: np.ndarray) -> float:
    k = idx.shape[1]
    sub = Gn[idx[:, :, None], idx[:, None, :]]
    evals, evecs = np.linalg.eigh(sub)
    if np.any(evals[:, 0] <= _SINGULAR):
        return 0.0
    H = np.einsum("nij,nj,nkj->nik", evecs, 1.0 / evals, evecs)
    Hs = np.einsum("nij,pj->npi", H, signs)
    ok = np.all(Hs * signs[None, :, :] > 0, axis=-1)
    quad = np.einsum("npi,pi->np", Hs, signs)
    if not np.any(ok):
        return np.inf
    # on the simplex face, min ||X b||^2 = 1 / (sigma' G^-1 sigma)
    return float(np.min(k / quad[ok]))


def uniform_compatibility(X, s: int, cfg: SolverConfig | None = None) -> float:
    """Uniform compatibility over vectors with at most ``s`` nonzeros.

    For a support ``S'`` and sign pattern, the minimum of ``||X b||^2`` on the
    simplex ``{sigma'b = 1, sigma_i b_i >= 0}`` lies in the relative interior of
    some face. Faces are themselves smaller supports, so it suffices to take,
    over every support of size ``k <= s`` and pattern with
    ``sign(G^-1 sigma) = sigma``, the interior value ``k / (sigma' G^-1 sigma)``.
    A singular Gram block means some ``s``-sparse ``b != 0`` has ``X b = 0``.
    """
    cfg = cfg or SolverConfig()
    X = as_design(X)
    if not 1 <= s:
        raise DomainError("s must be >= 1")
    s = min(s, X.p)
    _check_budget(X.p, s, cfg.subset_budget, lambda k: 2 ** (k - 1))
    Gn = X.gram / X.x_norm ** 2
    best = np.inf
    for k in range(1, s + 1):
        signs = sign_patterns(k)
        for idx in _combinations(X.p, k):
            best = min(best, _uniform_block(Gn, idx, signs))
            if best == 0.0:
                return 0.0
    return math.sqrt(best)


def sparse_singular(X, s: int, cfg: SolverConfig | None = None) -> float:
    """Smallest singular value over column submatrices of size ``<= s``, over ``||X||``."""
    cfg = cfg or SolverConfig()
    X = as_design(X)
    if not 1 <= s:
        raise DomainError("s must be >= 1")
    s = min(s, X.p)
    _check_budget(X.p, s, cfg.subset_budget)
    Gn = X.gram / X.x_norm ** 2
    best = np.inf
    for k in range(1, s + 1):
        for idx in _combinations(X.p, k):
            sub = Gn[idx[:, :, None], idx[:, None, :]]
            best = min(best, float(np.linalg.eigvalsh(sub)[:, 0].min()))
    return math.sqrt(max(best, 0.0))


def psi_dimension(S_size: int, phi_S: float, lam: float, lam_bar: float, A4: float) -> int:
    x = (2.0 + 3.0 / A4 + (33.0 / phi_S ** 2) * (lam / lam_bar)) * S_size
    return int(math.ceil(x - 1e-12))


def psi_indices(X, S, lam: float, A4: float, diag: "DiagnosticsReport | None" = None,
                cfg: SolverConfig | None = None):
    """Return ``(phi_bar(d), phi_tilde(d))`` at the inflated dimension
    ``d = ceil((2 + 3/A4 + 33 lam / (phi(S)^2 lam_bar)) |S|)``."""
    cfg = cfg or SolverConfig()
    X = as_design(X)
    model = S if isinstance(S, Model) else Model.of(S)
    if diag is not None and model in diag.phi:
        phi_S = diag.phi[model]
    else:
        phi_S = compatibility(X, model, cfg)
    if phi_S <= 0:
        raise DomainError("psi indices need phi(S) > 0")
    d = psi_dimension(model.s, phi_S, lam, lambda_bar(X), A4)
    d_eff = min(d, X.p)
    try:
        pb = diag.phi_bar[d_eff] if diag is not None and d_eff in diag.phi_bar else \
            uniform_compatibility(X, d_eff, cfg)
        pt = diag.phi_tilde[d_eff] if diag is not None and d_eff in diag.phi_tilde else \
            sparse_singular(X, d_eff, cfg)
    except ComplexityRefused as exc:
        raise ComplexityRefused(f"psi dimension d = {d}: {exc}", needed=exc.needed,
                                budget=exc.budget) from None
    return pb, pt


@dataclass
class DiagnosticsReport:
    mc: float
    phi: dict = field(default_factory=dict)
    phi_bar: dict = field(default_factory=dict)
    phi_tilde: dict = field(default_factory=dict)
    psi: dict = field(default_factory=dict)
    cone_constant: float = 7.0

    def to_dict(self) -> dict:
        return {
            "mutual_coherence": self.mc,
            "cone_constant": self.cone_constant,
            "phi": [{"support": list(m.indices), "value": v} for m, v in self.phi.items()],
            "phi_bar": {str(k): v for k, v in sorted(self.phi_bar.items())},
            "phi_tilde": {str(k): v for k, v in sorted(self.phi_tilde.items())},
            "psi": [{"support": list(m.indices), "psi_bar": a, "psi_tilde": b}
                    for m, (a, b) in self.psi.items()],
        }


def diagnose(X, s_max: int, supports=(), lam: float | None = None, A4: float | None = None,
             cfg: SolverConfig | None = None) -> DiagnosticsReport:
    """Compute all indices up to ``s_max`` plus ``phi``/``psi`` for the given supports."""
    cfg = cfg or SolverConfig()
    X = as_design(X)
    rep = DiagnosticsReport(mc=mutual_coherence(X), cone_constant=cfg.cone_constant)
    for s in range(1, min(s_max, X.p) + 1):
        rep.phi_bar[s] = uniform_compatibility(X, s, cfg)
        rep.phi_tilde[s] = sparse_singular(X, s, cfg)
    for S in supports:
        m = S if isinstance(S, Model) else Model.of(S)
        rep.phi[m] = compatibility(X, m, cfg)
        if lam is not None and A4 is not None:
            rep.psi[m] = psi_indices(X, m, lam, A4, rep, cfg)
    return rep
