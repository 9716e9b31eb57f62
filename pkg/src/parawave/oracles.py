"""Slow, independent reference computations used by ``verify`` and the tests.

Nothing here shares code paths with the fast implementations beyond the
basic Gaussian log-density.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, List, Optional

import numpy as np

from .quadrature import adaptive_simpson, gauss_hermite_normal

LOG_2PI = math.log(2.0 * math.pi)


def naive_conv1d(x: np.ndarray, w: np.ndarray, dilation: int) -> np.ndarray:
    """Causal dilated convolution as an explicit triple loop; ``x`` is ``[C_in, T]``."""
    c_out, c_in, k_size = w.shape
    T = x.shape[1]
    out = np.zeros((c_out, T))
    for o in range(c_out):
        for t in range(T):
            acc = 0.0
            for i in range(c_in):
                for k in range(k_size):
                    src = t - (k_size - 1 - k) * dilation
                    if src >= 0:
                        acc += w[o, i, k] * x[i, src]
            out[o, t] = acc
    return out


def naive_dft_magnitude(frame: np.ndarray, n: int) -> np.ndarray:
    """``|sum_m frame[m] exp(-2 pi i k m / n)|`` for ``k = 0..n/2`` by direct summation."""
    padded = np.zeros(n)
    padded[:len(frame)] = frame
    out = np.zeros(n // 2 + 1)
    for k in range(n // 2 + 1):
        re = im = 0.0
        for m in range(n):
            ang = 2.0 * math.pi * k * m / n
            re += padded[m] * math.cos(ang)
            im -= padded[m] * math.sin(ang)
        out[k] = math.hypot(re, im)
    return out


def hann_window(n: int) -> np.ndarray:
    return np.array([0.5 - 0.5 * math.cos(2.0 * math.pi * i / n) for i in range(n)])


def triangular_filterbank(bands: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Mel triangles built point by point from the HTK mel formula."""
    def to_mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    top = to_mel(sample_rate / 2.0)
    edges = [to_hz(top * i / (bands + 1)) for i in range(bands + 2)]
    bins = fft_size // 2 + 1
    fb = np.zeros((bands, bins))
    for b in range(bands):
        left, centre, right = edges[b], edges[b + 1], edges[b + 2]
        for k in range(bins):
            f = k * sample_rate / fft_size
            if left < f <= centre:
                fb[b, k] = (f - left) / (centre - left)
            elif centre < f < right:
                fb[b, k] = (right - f) / (right - centre)
    return fb


def _logpdf(x, mu, sigma):
    return -0.5 * LOG_2PI - np.log(sigma) - 0.5 * ((x - mu) / sigma) ** 2


def kl_simpson(q, p, width: float = 12.0) -> float:
    """KL(q || p) as the integral of ``q log(q/p)`` over ``mu_q +- width * sigma_q``."""
    (mq, sq), (mp, sp) = q, p

    def f(u):
        x = mq + sq * u
        return np.exp(-0.5 * u * u - 0.5 * LOG_2PI) * (_logpdf(x, mq, sq) - _logpdf(x, mp, sp))

    return adaptive_simpson(f, -width, width, tol=1e-13)


def kl_gauss_hermite(q, p, n: int = 64) -> float:
    (mq, sq), (mp, sp) = q, p
    u, w = gauss_hermite_normal(n)
    x = mq + sq * u
    return float(np.sum(w * (_logpdf(x, mq, sq) - _logpdf(x, mp, sp))))


def cross_entropy_simpson(a, b, width: float = 12.0) -> float:
    """``-integral a(x) log b(x) dx`` over ``mu_a +- width * sigma_a``."""
    (ma, sa), (mb, sb) = a, b

    def f(u):
        x = ma + sa * u
        return -np.exp(-0.5 * u * u - 0.5 * LOG_2PI) * _logpdf(x, mb, sb)

    return adaptive_simpson(f, -width, width, tol=1e-13)


def finite_difference_grads(loss: Callable[[], float], params: Iterable, step: float = 1e-5) -> List[np.ndarray]:
    """Central differences of ``loss()`` with respect to every coordinate of each tensor's ``data``."""
    out = []
    for t in params:
        g = np.zeros(t.data.shape)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss()
            flat[i] = orig - step
            lo = loss()
            flat[i] = orig
            g.reshape(-1)[i] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` per coordinate."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def sequence_kl_quadrature(teacher, stack, cond: Optional[np.ndarray] = None, n: int = 64) -> float:
    """Sequence-level KL(q(x) || p(x)) for ``T = 2`` by tensor-product Gauss-Hermite.

    Integrates ``log q(f(z)) - log p(f(z))`` against the standard normal
    density of ``z = (z_1, z_2)``; ``log q`` uses the change of variables
    ``log N(z) - sum log sigma`` and ``log p`` the teacher's factorization.
    """
    from .student import iaf_sample
    from .teacher import teacher_forward

    u, w = gauss_hermite_normal(n)
    z1, z2 = np.meshgrid(u, u, indexing="ij")
    z = np.stack([z1.reshape(-1), z2.reshape(-1)], axis=1)
    x, q = iaf_sample(z, stack, cond)
    p = teacher_forward(x.data, cond, teacher)
    log_q = np.sum(-0.5 * LOG_2PI - 0.5 * z * z - q.log_sigma.data, axis=1)
    log_p = np.sum(_logpdf(x.data, p.mu.data, np.exp(p.log_sigma.data)), axis=1)
    weights = np.outer(w, w).reshape(-1)
    return float(np.sum(weights * (log_q - log_p)))
