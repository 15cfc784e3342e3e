"""Closed-form escape times of the 1D toy system ``dx = x dt + sigma dW`` from ``|x| < 1``.

The mean exit time through ``|x| = 1`` started at ``x`` is

    T(x, sigma) = 2 * int_{|x|/sigma}^{1/sigma} F(u) du,

with ``F`` the Dawson function. For large arguments the integral of ``2 F`` has the
asymptotic antiderivative ``log u - sum_k (2k-1)!! / (2^k 2k u^{2k})``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad
from scipy.special import dawsn

from .errors import ConfigError

TAIL_START = 8.0  # beyond this the asymptotic antiderivative is used
TAIL_TERMS = 6  # truncation error below 1e-9 at u = 8


def _tail_coefficients(n_terms: int) -> np.ndarray:
    c = np.empty(n_terms)
    dfact = 1.0
    for k in range(1, n_terms + 1):
        dfact *= 2 * k - 1
        c[k - 1] = dfact / (2.0 ** k * 2 * k)
    return c


_TAIL = _tail_coefficients(TAIL_TERMS)


def dawson_antiderivative_tail(u, n_terms: int = TAIL_TERMS):
    """Asymptotic antiderivative of ``2 F(u)`` for large ``u``, up to an additive constant."""
    u = np.asarray(u, dtype=float)
    c = _TAIL if n_terms == TAIL_TERMS else _tail_coefficients(n_terms)
    out = np.log(u)
    for k, ck in enumerate(c, start=1):
        out = out - ck / u ** (2 * k)
    return out


def _integral(a: float, b: float, U: float) -> float:
    """``int_a^b 2 F(u) du`` for ``0 <= a <= b``."""
    if a >= b:
        return 0.0
    if b <= U:
        return 2.0 * quad(dawsn, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    if a >= U:
        return float(dawson_antiderivative_tail(b) - dawson_antiderivative_tail(a))
    head = 2.0 * quad(dawsn, a, U, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return head + float(dawson_antiderivative_tail(b) - dawson_antiderivative_tail(U))


def analytic_escape_time(x, sigma: float, U: float = TAIL_START):
    """Mean exit time from ``(-1, 1)`` starting at ``x``; vectorised over ``x``."""
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ConfigError(f"sigma must be positive and finite, got {sigma}")
    if U <= 0:
        raise ConfigError("the tail start must be positive")
    xs = np.abs(np.asarray(x, dtype=float))
    if np.any(~(xs < 1.0)):
        raise ConfigError("x must lie in (-1, 1)")
    out = np.array([_integral(xi / sigma, 1.0 / sigma, U) for xi in xs.reshape(-1)]).reshape(xs.shape)
    return out if out.ndim else float(out)


def deterministic_escape_time(x):
    """Noise-free exit time ``log(1 / |x|)``, the ``sigma -> 0`` limit."""
    xs = np.abs(np.asarray(x, dtype=float))
    if np.any(~(xs < 1.0)):
        raise ConfigError("x must lie in (-1, 1)")
    with np.errstate(divide="ignore"):
        out = -np.log(xs)
    return out if out.ndim else float(out)


def analytic_lifetime(sigma: float, samples, U: float = TAIL_START) -> float:
    """Escape time averaged uniformly over the entry points ``samples``.

    ``sigma = 0`` gives the deterministic average.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if len(samples) == 0:
        raise ConfigError("no entry samples")
    if sigma == 0:
        return float(np.mean(deterministic_escape_time(samples)))
    return float(np.mean(analytic_escape_time(samples, sigma, U)))


def analytic_lifetimes(sigma_grid, samples, U: float = TAIL_START):
    """:class:`LifetimeReport` of :func:`analytic_lifetime` over a sigma grid."""
    from .chain import LifetimeReport

    grid = np.asarray(sigma_grid, dtype=float)
    vals = np.array([analytic_lifetime(s, samples, U) for s in grid])
    return LifetimeReport(grid, vals, "analytic", np.zeros(len(grid)),
                          np.full(len(grid), len(np.ravel(samples))), np.zeros(len(grid), dtype=int))
