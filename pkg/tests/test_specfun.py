import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughsurf.specfun import (
    J0_FIRST_ZERO,
    bessel_j0j1,
    bessel_y0y1,
    gauss_legendre,
    h0,
    h1,
    hankel1,
)

ARGS = [1e-6, 1e-3, 0.1, 1.0, 2.404825557695773, 7.5, 30.0, 123.456, 1e3]


@pytest.mark.parametrize("x", ARGS)
def test_bessel_against_mpmath(x):
    j0, j1 = bessel_j0j1(x)
    y0, y1 = bessel_y0y1(x)
    for got, ref in [(j0, mp.besselj(0, x)), (j1, mp.besselj(1, x)), (y0, mp.bessely(0, x)), (y1, mp.bessely(1, x))]:
        ref = float(ref)
        assert abs(got - ref) <= 1e-14 * max(1.0, abs(ref)) + 1e-15


@pytest.mark.parametrize("x", ARGS)
def test_hankel_matches_components(x):
    j0, j1 = bessel_j0j1(x)
    y0, y1 = bessel_y0y1(x)
    assert hankel1(0, x) == complex(j0, y0)
    assert hankel1(1, x) == complex(j1, y1)
    assert h0(np.array([x]))[0] == pytest.approx(complex(j0, y0), rel=1e-15)
    assert h1(np.array([x]))[0] == pytest.approx(complex(j1, y1), rel=1e-15)


def test_wronskian():
    x = np.linspace(0.05, 60, 400)
    for xi in x:
        j0, j1 = bessel_j0j1(xi)
        y0, y1 = bessel_y0y1(xi)
        assert j1 * y0 - j0 * y1 == pytest.approx(2 / (math.pi * xi), rel=1e-12)


def test_small_argument_log_behaviour():
    x = 1e-8
    y0, _ = bessel_y0y1(x)
    assert y0 == pytest.approx(2 / math.pi * (math.log(x / 2) + 0.5772156649015329), rel=1e-12)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_invalid_argument(bad):
    with pytest.raises(ValueError):
        bessel_j0j1(bad)
    with pytest.raises(ValueError):
        hankel1(0, bad)


def test_invalid_order():
    with pytest.raises(ValueError):
        hankel1(2, 1.0)


def test_first_zero():
    assert J0_FIRST_ZERO == pytest.approx(float(mp.besseljzero(0, 1)), rel=1e-15)
    assert abs(bessel_j0j1(J0_FIRST_ZERO)[0]) < 1e-15


@pytest.mark.parametrize("n", [1, 2, 5, 16, 33, 64])
def test_gauss_legendre_exactness(n):
    rule = gauss_legendre(n)
    assert len(rule.nodes) == n
    assert np.all(np.diff(rule.nodes) > 0)
    np.testing.assert_array_equal(rule.nodes, -rule.nodes[::-1])
    np.testing.assert_array_equal(rule.weights, rule.weights[::-1])
    for m in range(2 * n):
        exact = 0.0 if m % 2 else 2.0 / (m + 1)
        assert rule.integrate(lambda t: t**m) == pytest.approx(exact, abs=1e-14)


def test_gauss_legendre_16_nodes_frozen():
    rule = gauss_legendre(16)
    # largest node of the 16-point rule
    assert rule.nodes[-1] == pytest.approx(0.9894009349916499, abs=1e-15)
    assert rule.weights[-1] == pytest.approx(0.027152459411754095, abs=1e-15)
    assert rule.weights.sum() == pytest.approx(2.0, abs=1e-14)


@pytest.mark.parametrize("n", [0, 65, 2.5])
def test_gauss_legendre_rejects(n):
    with pytest.raises(ValueError):
        gauss_legendre(n)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-3, max_value=200.0))
def test_hankel_asymptotics_consistent(x):
    # |H0|^2 is monotonically decreasing and ~ 2/(pi x) for large x
    v = abs(hankel1(0, x)) ** 2
    assert v > 0
    if x > 50:
        assert v == pytest.approx(2 / (math.pi * x), rel=2e-2)
