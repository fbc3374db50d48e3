import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import logit

from oracles import g_quadrature, phi_series
from scrank.transfer import Logistic, NormalCDF, norm_cdf

PHI_1 = phi_series(1.0)
PHI_M4 = phi_series(-4.0)


def test_oracle_matches_tabulated_values():
    # four-decimal table values
    assert abs(PHI_1 - 0.8413) < 5e-5
    assert abs(PHI_M4 - 3.167e-5) < 5e-8


def test_cdf_examples():
    assert norm_cdf(0.0) == 0.5
    assert abs(norm_cdf(1.0) - PHI_1) < 1e-12
    assert abs(norm_cdf(-4.0) - PHI_M4) < 1e-9 * PHI_M4
    f = NormalCDF(100, 25)
    assert f(100.0) == 0.5
    assert abs(f(125.0) - PHI_1) < 1e-12
    assert abs(f(0.0) - PHI_M4) < 1e-9 * PHI_M4


@pytest.mark.parametrize("x", np.linspace(-8, 8, 33))
def test_cdf_against_series(x):
    assert abs(norm_cdf(x) - phi_series(x)) < 1e-13


def test_g_endpoints_and_midpoint():
    f = NormalCDF(100, 25)
    assert f.inverse_integral(0.0) == 0.0
    assert abs(f.inverse_integral(1.0) - 100.0) < 1e-12
    expected = 50.0 - 25.0 / math.sqrt(2 * math.pi)
    assert abs(f.inverse_integral(0.5) - expected) < 1e-12
    assert abs(expected - 40.0264) < 1e-4


@pytest.mark.parametrize("mu,sigma", [(100, 25), (0.5, 0.1), (-3, 2), (100, 1)])
def test_g_matches_quadrature(mu, sigma):
    f = NormalCDF(mu, sigma)
    ys = np.linspace(0, 1, 1000)
    oracle = np.array([g_quadrature(y, mu, sigma) for y in ys])
    assert np.abs(f.inverse_integral(ys) - oracle).max() <= 1e-8


def test_g_rejects_out_of_range():
    f = NormalCDF(100, 25)
    for bad in (-1e-9, 1.0 + 1e-9, float("nan")):
        with pytest.raises(ValueError):
            f.inverse_integral(bad)


def test_lipschitz_constants():
    assert abs(NormalCDF(100, 25).lipschitz - 0.0159577) < 1e-7
    assert abs(NormalCDF(0, 1).lipschitz - 0.398942) < 1e-6
    xs = np.linspace(-200, 400, 20001)
    f = NormalCDF(100, 25)
    assert f.derivative(xs).max() <= f.lipschitz * (1 + 1e-12)


def test_invalid_sigma():
    with pytest.raises(ValueError):
        NormalCDF(0, 0)
    with pytest.raises(ValueError):
        Logistic(0, -1)


@settings(max_examples=200, deadline=None)
@given(st.floats(-300, 500))
def test_inverse_roundtrip(x):
    f = NormalCDF(100, 25)
    y = f(x)
    if 1e-12 < y < 1 - 1e-9:
        assert abs(f.inverse(y) - x) < 1e-6 * max(1.0, abs(x))


def test_g_derivative_is_inverse():
    f = NormalCDF(100, 25)
    for y in (0.1, 0.3, 0.5, 0.77, 0.95):
        h = 1e-6
        num = (f.inverse_integral(y + h) - f.inverse_integral(y - h)) / (2 * h)
        assert abs(num - f.inverse(y)) < 1e-4


def test_per_vertex_parameters():
    mu = np.array([0.0, 10.0, 100.0])
    f = NormalCDF(mu, 5.0)
    assert np.allclose(f(np.array([0.0, 10.0, 100.0])), 0.5)
    y = np.array([0.2, 0.5, 0.9])
    g = f.inverse_integral(y)
    for k in range(3):
        assert abs(g[k] - NormalCDF(mu[k], 5.0).inverse_integral(y[k])) < 1e-12


# --- potential drop -------------------------------------------------------

def mp_drop(y_old, y_new, x, mu, sigma):
    mpmath.mp.dps = 50

    def G(y):
        y = mpmath.mpf(y)
        if y == 0:
            return mpmath.mpf(0)
        if y == 1:
            return mpmath.mpf(mu)
        z = mpmath.sqrt(2) * mpmath.erfinv(2 * y - 1)
        return mu * y - sigma * mpmath.npdf(z)
    return float(G(y_old) - G(y_new) - mpmath.mpf(x) * (mpmath.mpf(y_old) - mpmath.mpf(y_new)))


@pytest.mark.parametrize("y_old,x", [(0.3, 90.0), (0.9, 101.0), (0.5, 100.0 + 1e-5),
                                     (1e-6, 50.0), (1.0, 160.0), (0.0, 130.0), (0.999, 200.0)])
def test_drop_matches_high_precision(y_old, x):
    f = NormalCDF(100, 25)
    y_new = f(x)
    ref = mp_drop(y_old, y_new, x, 100, 25)
    got = f.drop(y_old, y_new, x)
    assert got >= 0
    assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))


def test_drop_tiny_change_keeps_relative_precision():
    # absolute potentials of order 100 cannot resolve a change of order 1e-20
    f = NormalCDF(100, 25)
    x = 103.0
    y_new = f(x)
    y_old = y_new + 1e-10
    ref = mp_drop(y_old, y_new, x, 100, 25)
    assert ref > 0
    assert (100.0 + ref) - 100.0 == 0.0
    # limited by inverting the rounded y_new (a few ulps in input space)
    assert abs(f.drop(y_old, y_new, x) - ref) < 1e-4 * ref


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(-100, 300))
def test_drop_nonnegative_at_response(y_old, x):
    f = NormalCDF(100, 25)
    assert f.drop(y_old, f(x), x) >= -1e-12


def test_logistic_basics():
    f = Logistic(0.5, 10.0)
    assert f(0.5) == 0.5
    assert abs(f.lipschitz - 2.5) < 1e-15
    assert f.inverse_integral(0.0) == 0.0
    # integral of the logit over [0, 1] is zero, so G(1) equals the center
    assert abs(f.inverse_integral(1.0) - 0.5) < 1e-12
    for y in (0.1, 0.4, 0.8):
        val, _ = quad(lambda t: 0.5 + logit(t) / 10.0, 0, y, epsabs=1e-13, limit=200)
        assert abs(f.inverse_integral(y) - val) < 1e-9


def test_logistic_signed_range():
    f = Logistic(0.0, 3.0, lo=-1.0, hi=1.0)
    assert f(0.0) == 0.0
    assert f.inverse_integral(0.0) == 0.0
    for y in (-0.9, -0.2, 0.5, 0.99):
        val, _ = quad(lambda t: f.inverse(t), 0.0, y, epsabs=1e-13, limit=200)
        assert abs(f.inverse_integral(y) - val) < 1e-9
    with pytest.raises(ValueError):
        f.inverse_integral(-1.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(-5, 5))
def test_logistic_drop_nonnegative(y_old, x):
    f = Logistic(0.0, 3.0, lo=-1.0, hi=1.0)
    assert f.drop(y_old, f(x), x) >= -1e-12
