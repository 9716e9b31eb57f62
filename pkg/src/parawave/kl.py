"""Closed-form Gaussian divergences and the Monte-Carlo baseline.

Distributions are passed as ``(mu, sigma)`` pairs; every function works
elementwise on arrays as well as on scalars.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ContractError
from .quadrature import adaptive_simpson
from .rng import standard_normal

LOG_2PI = math.log(2.0 * math.pi)


def _check_sigma(*sigmas):
    for s in sigmas:
        if np.any(np.asarray(s) <= 0) or not np.all(np.isfinite(s)):
            raise ContractError("standard deviations must be positive and finite")


def gaussian_kl(q, p):
    """KL(q || p) for univariate Gaussians."""
    mu_q, s_q = q
    mu_p, s_p = p
    _check_sigma(s_q, s_p)
    mu_q, s_q, mu_p, s_p = map(np.asarray, (mu_q, s_q, mu_p, s_p))
    out = np.log(s_p / s_q) + (s_q ** 2 - s_p ** 2 + (mu_p - mu_q) ** 2) / (2.0 * s_p ** 2)
    return out if out.ndim else float(out)


def gaussian_entropy(sigma):
    _check_sigma(sigma)
    out = 0.5 * np.log(2.0 * np.pi * np.asarray(sigma) ** 2) + 0.5
    return out if np.ndim(out) else float(out)


def gaussian_cross_entropy(q, p):
    """H(q, p) = -E_q[log p]."""
    mu_q, s_q = q
    mu_p, s_p = p
    _check_sigma(s_q, s_p)
    mu_q, s_q, mu_p, s_p = map(np.asarray, (mu_q, s_q, mu_p, s_p))
    out = 0.5 * np.log(2.0 * np.pi * s_p ** 2) + (s_q ** 2 + (mu_p - mu_q) ** 2) / (2.0 * s_p ** 2)
    return out if out.ndim else float(out)


def regularized_kl(q, p, lam: float = 4.0):
    """``lam * (log sigma_p - log sigma_q)^2 + KL(q || p)``."""
    if lam < 0:
        raise ContractError("lambda must be >= 0")
    reg = lam * (np.log(np.asarray(p[1])) - np.log(np.asarray(q[1]))) ** 2
    out = reg + gaussian_kl(q, p)
    return out if np.ndim(out) else float(out)


def regularized_forward_ce(q, p, lam: float = 4.0):
    """Forward variant: ``lam * (log sigma_p - log sigma_q)^2 + H(p, q)`` (teacher entropy dropped)."""
    reg = lam * (np.log(np.asarray(p[1])) - np.log(np.asarray(q[1]))) ** 2
    out = reg + gaussian_cross_entropy(p, q)
    return out if np.ndim(out) else float(out)


def gaussian_logpdf(x, mu, sigma):
    return -0.5 * LOG_2PI - np.log(sigma) - 0.5 * ((x - mu) / sigma) ** 2


def mc_kl_estimate(q, p, n_samples: int, seed: int) -> float:
    """Sample-average of ``log q(x) - log p(x)`` with ``x ~ q``."""
    return float(np.mean(mc_kl_samples(q, p, n_samples, seed)))


def mc_kl_samples(q, p, n_samples: int, seed: int) -> np.ndarray:
    mu_q, s_q = q
    mu_p, s_p = p
    _check_sigma(s_q, s_p)
    x = mu_q + s_q * standard_normal(seed, n_samples)
    return gaussian_logpdf(x, mu_q, s_q) - gaussian_logpdf(x, mu_p, s_p)


# ----------------------------------------------------------- logistic family

def logistic_logpdf(x, loc, scale):
    u = (np.asarray(x) - loc) / scale
    return -np.abs(u) - 2.0 * np.log1p(np.exp(-np.abs(u))) - np.log(scale)


def logistic_kl_numeric(q, p, half_width: float = 60.0) -> float:
    """KL(q || p) between logistic distributions ``(loc, scale)`` by quadrature.

    Integrates over ``q``'s standardized coordinate ``u`` in ``[-w, w]``.
    """
    (lq, sq), (lp, sp) = q, p
    _check_sigma(sq, sp)

    def integrand(u):
        x = lq + sq * u
        dens = np.exp(logistic_logpdf(u, 0.0, 1.0))
        return dens * (logistic_logpdf(x, lq, sq) - logistic_logpdf(x, lp, sp))

    return adaptive_simpson(integrand, -half_width, half_width, tol=1e-13)


def logistic_regularized_kl(q, p, lam: float = 4.0) -> float:
    return lam * (math.log(p[1]) - math.log(q[1])) ** 2 + logistic_kl_numeric(q, p)
