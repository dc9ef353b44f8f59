import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughsurf.errors import ConfigurationError
from roughsurf.kernels import (
    WaveContext,
    bessel_zero_gap,
    kernel_kprime,
    kernel_kprime_reflected,
    kprime_diagonal,
    log_split,
    log_weights,
    phi_k,
    single_layer_diagonal,
)
from roughsurf.specfun import gauss_legendre


def mp_phi(x, y, k):
    r = mp.sqrt((x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2)
    return complex(0.25j * mp.hankel1(0, k * r))


def test_phi_against_mpmath():
    x, y = np.array([0.3, -0.2]), np.array([-0.1, 0.5])
    assert phi_k(x, y, 7.0) == pytest.approx(mp_phi(x, y, 7.0), rel=1e-14)


def test_kprime_is_normal_derivative():
    x, y, k = np.array([0.3, -0.2]), np.array([-0.1, 0.5]), 4.0
    nu = np.array([0.6, 0.8])
    e = 1e-6
    fd = (phi_k(x + e * nu, y, k) - phi_k(x - e * nu, y, k)) / (2 * e)
    assert kernel_kprime(x, nu, y, k) == pytest.approx(fd, rel=1e-8)


def test_reflected_kernel():
    x, y, k = np.array([0.3, -0.2]), np.array([-0.1, 0.5]), 4.0
    nu = np.array([0.6, 0.8])
    assert kernel_kprime_reflected(x, nu, y, k) == kernel_kprime(np.array([0.3, 0.2]), np.array([0.6, -0.8]), y, k)


def test_singular_arguments_rejected():
    x = np.array([0.1, 0.2])
    with pytest.raises(ValueError):
        phi_k(x, x, 1.0)
    with pytest.raises(ValueError):
        kernel_kprime(x, np.array([0, 1.0]), x, 1.0)
    with pytest.raises(ValueError):
        log_split("kprime", x, np.array([0, 1.0]), x, 1.0)
    with pytest.raises(ValueError):
        log_split("other", x, None, x + 1, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-6, 3.0), st.floats(0, 2 * math.pi), st.floats(0.5, 30.0))
def test_log_split_reconstructs_kernel(r, angle, k):
    x = np.array([0.2, -0.1])
    y = x + r * np.array([math.cos(angle), math.sin(angle)])
    nu = np.array([0.0, 1.0])
    s, L = log_split("phi", x, nu, y, k)
    assert s + L * math.log(r) == pytest.approx(phi_k(x, y, k), rel=1e-11, abs=1e-13)
    s, L = log_split("kprime", x, nu, y, k)
    assert s + L * math.log(r) == pytest.approx(kernel_kprime(x, nu, y, k), rel=1e-11, abs=1e-11)


def test_single_layer_smooth_part_limit():
    k = 3.0
    x = np.array([0.0, 0.0])
    s_diag, L = log_split("phi", x, None, x, k)
    assert s_diag == single_layer_diagonal(k)
    assert L == pytest.approx(-1 / (2 * math.pi))
    s_near, _ = log_split("phi", x, None, np.array([1e-7, 0.0]), k)
    assert s_near == pytest.approx(s_diag, abs=1e-10)


def test_kprime_diagonal_limit_on_circle():
    # on a circle of radius a (outward normal) K'(x, y) -> -1/(4 pi a) as y -> x
    a, k = 0.1, 5.0
    x = np.array([a, 0.0])
    nu = np.array([1.0, 0.0])
    t = 1e-4
    y = a * np.array([math.cos(t), math.sin(t)])
    s, L = log_split("kprime", x, nu, y, k)
    s0, L0 = log_split("kprime", x, nu, x, k, curvature=1 / a)
    assert L0 == 0.0
    assert s0 == pytest.approx(-1 / (4 * math.pi * a))
    assert s == pytest.approx(s0, abs=1e-4)
    d = kprime_diagonal(nu, np.array([0.0, a]), np.array([-a, 0.0]))
    assert d == pytest.approx(s0.real)


def mp_log_integral(f, tau):
    with mp.workdps(30):
        return mp.quad(lambda t: f(t) * mp.log(abs(t - tau)), [-1, tau, 1])


@pytest.mark.parametrize("tau", [-0.9894009349916499, -0.5, 0.0, 0.123456789, 0.9, 1.7, -2.3])
def test_log_weights_against_adaptive_quadrature(tau):
    rule = gauss_legendre(16)
    W = log_weights(tau)
    # polynomials are integrated exactly; cos(3t) carries the degree-15 interpolation error
    cases = [(lambda t: 1 + 0 * t, 1e-13), (lambda t: t**7, 1e-13), (lambda t: mp.cos(3 * t), 1e-10)]
    for f, tol in cases:
        got = float(np.dot(W, [float(f(mp.mpf(float(t)))) for t in rule.nodes]))
        ref = float(mp_log_integral(f, mp.mpf(tau)))
        assert got == pytest.approx(ref, abs=tol)


def test_log_weights_polynomial_exactness():
    rule = gauss_legendre(16)
    W = log_weights(0.3)
    for m in range(16):
        ref = float(mp_log_integral(lambda t: t**m, mp.mpf(0.3)))
        assert np.dot(W, rule.nodes**m) == pytest.approx(ref, abs=1e-13)


def test_log_weights_reject_endpoint():
    with pytest.raises(ValueError):
        log_weights(1.0)


def test_wave_context_validation():
    assert WaveContext(10.0, 1.0, 0.1).farfield_constant == pytest.approx(
        complex(np.exp(1j * np.pi / 4) / np.sqrt(80 * np.pi)))
    for bad in (0.0, -1.0, math.inf):
        with pytest.raises(ConfigurationError):
            WaveContext(bad)
    with pytest.raises(ConfigurationError):
        WaveContext(30.0, 1.0, 0.1)  # k r above the first zero of J0
    with pytest.raises(ConfigurationError):
        WaveContext(1.0, -1.0)


def test_bessel_zero_gap_against_mpmath():
    zeros = [float(mp.besseljzero(n, m)) for n in range(14) for m in range(1, 5)]
    for x in (0.5, 3.0, 6.2, 10.0):
        assert bessel_zero_gap(x) == pytest.approx(min(abs(x - z) for z in zeros if z < 12), abs=1e-12)


def test_wave_context_bessel_zero_rule():
    # k r = 10 sits between zeros, admissible only under the relaxed rule
    WaveContext(100.0, 1.0, 0.1, aux_rule="bessel-zeros")
    with pytest.raises(ConfigurationError):
        WaveContext(100.0, 1.0, 0.1)
    for z in (float(mp.besseljzero(0, 1)), float(mp.besseljzero(1, 1))):
        with pytest.raises(ConfigurationError):
            WaveContext(10 * z, 1.0, 0.1, aux_rule="bessel-zeros")
    with pytest.raises(ConfigurationError):
        WaveContext(1.0, 1.0, 0.1, aux_rule="nearest")
