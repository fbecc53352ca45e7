"""The Laplace-tilted normal ``exp(-(b - m)^2 / (2v) - lam |b|)`` in one dimension.

Its normalized form is a two-component mixture: ``N(m + lam v, v)`` truncated
to ``b < 0`` and ``N(m - lam v, v)`` truncated to ``b >= 0``. Everything below
works on broadcastable arrays and stays in log space so that piece weights,
CDFs and quantiles remain accurate deep in the tails.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

LOG_2PI = float(np.log(2.0 * np.pi))


def _pieces(m, v, lam):
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    sd = np.sqrt(v)
    mu_left = m + lam * v
    mu_right = m - lam * v
    # log masses without the shared factor exp(lam^2 v / 2) sqrt(2 pi v)
    log_wl = lam * m + log_ndtr(-mu_left / sd)
    log_wr = -lam * m + log_ndtr(mu_right / sd)
    return sd, mu_left, mu_right, log_wl, log_wr


def log_expect_laplace_factor(m, v, lam):
    """``log E[exp(-lam |b|)]`` for ``b ~ N(m, v)``."""
    _, _, _, log_wl, log_wr = _pieces(m, v, lam)
    return 0.5 * lam * lam * np.asarray(v) + np.logaddexp(log_wl, log_wr)


def log_normalizer(m, v, lam):
    """``log of the integral of exp(-(b - m)^2 / (2v) - lam |b|) db``."""
    return 0.5 * (LOG_2PI + np.log(v)) + log_expect_laplace_factor(m, v, lam)


def prob_right(m, v, lam):
    """Mass of the ``b >= 0`` piece."""
    _, _, _, log_wl, log_wr = _pieces(m, v, lam)
    return 1.0 / (1.0 + np.exp(log_wl - log_wr))


def log_pdf(b, m, v, lam):
    b = np.asarray(b, dtype=float)
    return -0.5 * (b - m) ** 2 / v - lam * np.abs(b) - log_normalizer(m, v, lam)


def cdf(x, m, v, lam):
    x = np.asarray(x, dtype=float)
    sd, mu_l, mu_r, log_wl, log_wr = _pieces(m, v, lam)
    log_tot = np.logaddexp(log_wl, log_wr)
    log_pl = log_wl - log_tot
    log_pr = log_wr - log_tot
    # x < 0: pL * Phi((x - muL)/sd) / Phi(-muL/sd)
    left = np.exp(log_pl + log_ndtr((x - mu_l) / sd) - log_ndtr(-mu_l / sd))
    # x >= 0: 1 - pR * Phi((muR - x)/sd) / Phi(muR/sd)
    right = 1.0 - np.exp(log_pr + log_ndtr((mu_r - x) / sd) - log_ndtr(mu_r / sd))
    return np.where(x < 0, left, right)


def quantile(q, m, v, lam):
    q = np.asarray(q, dtype=float)
    sd, mu_l, mu_r, log_wl, log_wr = _pieces(m, v, lam)
    log_tot = np.logaddexp(log_wl, log_wr)
    log_pl = log_wl - log_tot
    log_pr = log_wr - log_tot
    pl = np.exp(log_pl)
    with np.errstate(divide="ignore", invalid="ignore"):
        xl = mu_l + sd * ndtri_exp(np.log(q) + log_ndtr(-mu_l / sd) - log_pl)
        xr = mu_r - sd * ndtri_exp(np.log1p(-q) + log_ndtr(mu_r / sd) - log_pr)
    return np.where(q <= pl, np.minimum(xl, 0.0), np.maximum(xr, 0.0))


def sample_upper_tail(a, gen: np.random.Generator, size=None):
    """Standard normal conditioned on ``z >= a`` by inverse CDF."""
    a = np.asarray(a, dtype=float)
    u = gen.random(size if size is not None else a.shape)
    return -ndtri_exp(np.log(u) + log_ndtr(-a))


def sample_two_piece(m, v, lam, gen: np.random.Generator, size=None):
    """Exact draws from the density proportional to ``exp(-(b-m)^2/(2v) - lam|b|)``."""
    m, v = np.broadcast_arrays(np.asarray(m, dtype=float), np.asarray(v, dtype=float))
    shape = size if size is not None else m.shape
    sd, mu_l, mu_r, log_wl, log_wr = _pieces(m, v, lam)
    pr = 1.0 / (1.0 + np.exp(log_wl - log_wr))
    right = gen.random(shape) < pr
    # right: muR + sd z with z >= -muR/sd ; left: muL - sd z with z >= muL/sd
    a = np.where(right, -mu_r / sd, mu_l / sd)
    z = sample_upper_tail(a, gen, shape)
    out = np.where(right, mu_r + sd * z, mu_l - sd * z)
    # guard the boundary against rounding
    return np.where(right, np.maximum(out, 0.0), np.minimum(out, -0.0))
