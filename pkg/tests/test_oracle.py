import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad
from scipy.special import dawsn

from stochastic_inertia.errors import ConfigError
from stochastic_inertia.oracle import (analytic_escape_time, analytic_lifetime, analytic_lifetimes,
                                       dawson_antiderivative_tail, deterministic_escape_time)


def nested_quadrature(x, sigma):
    """Backward-equation solution for dx = x dt + sigma dW on (-1, 1), integrated directly:

    T(x) = 2 / sigma^2 int_{|x|}^1 int_0^y exp((z^2 - y^2) / sigma^2) dz dy.
    """
    s2 = sigma * sigma
    val, _ = dblquad(lambda z, y: math.exp((z * z - y * y) / s2), abs(x), 1.0, 0.0, lambda y: y,
                     epsabs=1e-12, epsrel=1e-10)
    return 2.0 * val / s2


@given(x=st.floats(0.0, 0.95), sigma=st.floats(0.05, 2.0))
def test_matches_nested_quadrature(x, sigma):
    assert analytic_escape_time(x, sigma) == pytest.approx(nested_quadrature(x, sigma), rel=1e-4)


@pytest.mark.parametrize("x,sigma", [(0.01, 0.1), (1e-3, 0.01), (0.5, 0.02), (1e-4, 1e-3)])
def test_tail_split_is_seamless(x, sigma):
    """Using the asymptotic tail from U = 8 agrees with direct quadrature to the upper limit."""
    direct = 2 * quad(dawsn, x / sigma, 1 / sigma, limit=2000, epsabs=1e-13, epsrel=1e-13)[0]
    assert analytic_escape_time(x, sigma) == pytest.approx(direct, rel=1e-8)
    assert analytic_escape_time(x, sigma, U=20.0) == pytest.approx(direct, rel=1e-8)


def test_tail_series_derivative_is_twice_dawson():
    u = np.array([8.0, 12.0, 40.0])
    h = 1e-5
    deriv = (dawson_antiderivative_tail(u + h) - dawson_antiderivative_tail(u - h)) / (2 * h)
    np.testing.assert_allclose(deriv, 2 * dawsn(u), rtol=1e-8)


@given(x=st.floats(-0.99, 0.99), sigma=st.floats(0.01, 1.0))
def test_even_in_x_and_positive(x, sigma):
    t = analytic_escape_time(x, sigma)
    assert t == analytic_escape_time(-x, sigma)
    assert t >= 0


def test_vanishes_at_boundary_and_decreases_in_x():
    xs = np.linspace(0, 0.999, 30)
    t = analytic_escape_time(xs, 0.2)
    assert np.all(np.diff(t) < 0)
    assert analytic_escape_time(1 - 1e-9, 0.2) < 1e-6


def test_small_noise_limit_is_deterministic():
    for x in (0.01, 0.1, 0.5):
        assert analytic_escape_time(x, x / 50) == pytest.approx(deterministic_escape_time(x), rel=1e-3)
    assert deterministic_escape_time(0.0) == math.inf


def test_interior_maximum_near_start_point():
    """Noise lengthens the escape from x0 most when sigma is comparable with x0."""
    x0 = 0.01
    grid = np.geomspace(1e-4, 1.0, 81)
    t = np.array([analytic_escape_time(x0, s) for s in grid])
    k = int(np.argmax(t))
    assert 0 < k < len(grid) - 1
    assert 0.3 * x0 < grid[k] < 3 * x0
    assert t[k] > deterministic_escape_time(x0)


def test_invalid_arguments():
    with pytest.raises(ConfigError):
        analytic_escape_time(1.0, 0.1)
    with pytest.raises(ConfigError):
        analytic_escape_time(0.1, 0.0)
    with pytest.raises(ConfigError):
        analytic_escape_time(0.1, math.inf)
    with pytest.raises(ConfigError):
        analytic_escape_time(0.1, 0.1, U=0.0)
    with pytest.raises(ConfigError):
        analytic_lifetime(0.1, [])


def test_lifetimes_average_over_entries():
    samples = [0.01, 0.02, 0.05]
    rep = analytic_lifetimes([0.0, 0.03], samples)
    assert rep.lifetimes[0] == pytest.approx(np.mean(-np.log(samples)))
    assert rep.lifetimes[1] == pytest.approx(np.mean([analytic_escape_time(x, 0.03) for x in samples]))
    assert rep.method == "analytic"
