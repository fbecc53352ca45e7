"""The LASSO ``argmin ||y - X b||^2 + 2 lam ||b||_1`` and its full posterior.

The objective keeps the factor ``2 lam`` (many libraries use ``lam ||b||_1 / n``
instead): with unit-norm columns the coordinate update soft-thresholds at
``lam``. In the sequence model the posterior under i.i.d. Laplace(lam)
coordinates factorizes into independent two-piece normals, sampled exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import truncnorm
from .core import as_design, as_generator
from .errors import ConvergenceError, DomainError
from .exact import _y


@dataclass
class LassoFit:
    beta_hat: np.ndarray
    lam: float
    kkt_residual: float
    iterations: int
    objective: float


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_objective(X, y, beta, lam) -> float:
    r = _y(y) - as_design(X).entries @ beta
    return float(r @ r + 2.0 * lam * np.abs(beta).sum())


def kkt_residual(X, y, beta, lam) -> float:
    """Largest violation of the subgradient conditions ``X_j'r = lam sign(b_j)``
    on the active set and ``|X_j'r| <= lam`` off it."""
    X = as_design(X)
    g = X.entries.T @ (_y(y) - X.entries @ beta)
    active = beta != 0
    viol = np.where(active, np.abs(g - lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


def lasso_fit(X, y, lam: float, tol: float = 1e-10, max_iter: int = 100_000,
              beta0=None, monitor=None) -> LassoFit:
    """Cyclic coordinate descent with exact soft-threshold updates.

    Stops when the largest coordinate change of a sweep, or the KKT residual,
    drops to ``tol``. ``monitor`` (optional) is called with the objective after
    every sweep.
    """
    if lam < 0:
        raise DomainError("lam must be >= 0")
    X = as_design(X)
    y = _y(y)
    A = X.entries
    sq = X.col_norms ** 2
    beta = np.zeros(X.p) if beta0 is None else np.array(beta0, dtype=float)
    r = y - A @ beta
    scale = max(1.0, float(np.abs(A.T @ y).max()))
    for it in range(1, max_iter + 1):
        delta = 0.0
        for j in range(X.p):
            if sq[j] == 0.0:
                continue
            old = beta[j]
            z = A[:, j] @ r + sq[j] * old
            new = float(soft_threshold(z, lam)) / sq[j]
            if new != old:
                r -= A[:, j] * (new - old)
                beta[j] = new
                delta = max(delta, abs(new - old))
        if monitor is not None:
            monitor(lasso_objective(X, y, beta, lam))
        if delta <= tol:
            break
        if it % 10 == 0:
            # residual drift from incremental updates
            r = y - A @ beta
            if kkt_residual(X, y, beta, lam) <= tol * scale:
                break
    else:
        raise ConvergenceError(f"coordinate descent did not converge in {max_iter} sweeps",
                               best=beta)
    return LassoFit(beta, float(lam), kkt_residual(X, y, beta, lam), it,
                    lasso_objective(X, y, beta, lam))


def lasso_posterior_sample_seq(y, lam: float, rng, n_draws: int) -> np.ndarray:
    """Exact draws ``(n_draws, n)`` from ``prod_i exp(-(y_i - b_i)^2 / 2 - lam |b_i|)``."""
    y = _y(y)
    gen = as_generator(rng)
    if lam == 0:
        return y + gen.standard_normal((n_draws, y.shape[0]))
    return truncnorm.sample_two_piece(np.broadcast_to(y, (n_draws, y.shape[0])), 1.0, lam, gen)


def small_ball_mass(draws, radius: float):
    """Fraction of draws with ``||b||_2 <= radius`` and its binomial standard error."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    norms = np.sqrt((draws ** 2).sum(axis=1))
    frac = float(np.mean(norms <= radius))
    return frac, math.sqrt(frac * (1.0 - frac) / norms.shape[0])
