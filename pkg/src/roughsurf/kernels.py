"""Helmholtz kernels, their logarithmic splits, and product-integration weights.

With ``r = |x - y|``:

* ``Phi(x, y)  = (i/4) H0(k r)``
* ``K'(x, y)   = dPhi/dnu(x) = -(i k/4) H1(k r) nu(x).(x - y)/r``
* ``K're(x, y) = K'(x_re, y)`` with ``x_re = (x1, -x2)`` and ``nu(x_re) = (nu1, -nu2)``.

Each kernel splits as ``L(x, y) log r + S(x, y)`` with smooth ``L`` and ``S``:

* single layer: ``L = -J0(k r)/(2 pi)``, ``S(x, x) = i/4 - (log(k/2) + gamma_E)/(2 pi)``
* normal derivative: ``L = (k/(2 pi)) J1(k r) nu.(x - y)/r``, ``S(x, x) = -kappa(x)/(4 pi)``

where ``kappa`` is the curvature signed so that a circle with outward normal
has ``kappa = 1/radius``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp
import numpy as np
from scipy import special

from .geometry import NODES_PER_PANEL, ConfigurationError
from .specfun import J0_FIRST_ZERO, gauss_legendre

__all__ = [
    "WaveContext",
    "phi_k",
    "kernel_kprime",
    "kernel_kprime_reflected",
    "log_split",
    "single_layer_parts",
    "kprime_parts",
    "single_layer_diagonal",
    "kprime_diagonal",
    "log_weights",
]

EULER_GAMMA = 0.57721566490153286061
TWO_PI = 2.0 * math.pi
AUX_RULES = ("first-zero", "bessel-zeros")
AUX_ZERO_GAP = 1e-3


def bessel_zero_gap(x: float) -> float:
    """Distance from ``x > 0`` to the nearest positive zero of any ``J_n``."""
    gap = math.inf
    n = 0
    # j_{n,1} > n, so orders above x + 2 cannot have a zero near x
    while n <= x + 2:
        m = 1
        while True:
            zeros = special.jn_zeros(n, m)
            if zeros[-1] > x or m > 10_000:
                break
            m *= 2
        gap = min(gap, float(np.min(np.abs(zeros - x))))
        n += 1
    return gap


@dataclass(frozen=True)
class WaveContext:
    """Wavenumber, impedance coupling on the auxiliary circle, and its radius.

    ``rho_imp`` is the coupling constant of the single layer added on the
    auxiliary circle.  ``k^2`` must not be a Dirichlet eigenvalue of the
    auxiliary disk.  With ``aux_rule="first-zero"`` (default) this is enforced
    by ``k * aux_radius`` below the first zero of ``J0``; ``"bessel-zeros"``
    only keeps ``k * aux_radius`` away from every zero of every ``J_n``.
    """

    k: float
    rho_imp: float = 1.0
    aux_radius: float | None = None
    aux_rule: str = "first-zero"

    def __post_init__(self):
        k = float(self.k)
        if not (math.isfinite(k) and k > 0):
            raise ConfigurationError(f"wavenumber must be positive and finite, got {self.k!r}")
        object.__setattr__(self, "k", k)
        if not (math.isfinite(self.rho_imp) and self.rho_imp > 0):
            raise ConfigurationError(f"impedance coupling must be positive, got {self.rho_imp!r}")
        if self.aux_radius is not None:
            if not self.aux_radius > 0:
                raise ConfigurationError(f"auxiliary radius must be positive, got {self.aux_radius!r}")
            if self.aux_rule not in AUX_RULES:
                raise ConfigurationError(f"aux_rule must be one of {AUX_RULES}, got {self.aux_rule!r}")
            if self.aux_rule == "bessel-zeros":
                gap = bessel_zero_gap(k * self.aux_radius)
                if gap < AUX_ZERO_GAP * max(1.0, k * self.aux_radius):
                    raise ConfigurationError(
                        f"k * aux_radius = {k * self.aux_radius:.6g} is within {gap:.3g} of a Bessel zero; "
                        "change the auxiliary radius"
                    )
            elif k * self.aux_radius >= J0_FIRST_ZERO:
                raise ConfigurationError(
                    f"k * aux_radius = {k * self.aux_radius:.6g} is not below the first zero of J0 "
                    f"({J0_FIRST_ZERO:.6g}); shrink the auxiliary circle"
                )

    @property
    def farfield_constant(self) -> complex:
        return complex(np.exp(0.25j * np.pi) / np.sqrt(8.0 * np.pi * self.k))


# ---------------------------------------------------------------------------
# vectorised kernel pieces (off-diagonal, r > 0)
# ---------------------------------------------------------------------------
def single_layer_parts(r: np.ndarray, k: float) -> tuple[np.ndarray, np.ndarray]:
    """``(Phi, L)`` for the single layer at distances ``r > 0``."""
    kr = k * r
    j0 = special.j0(kr)
    val = 0.25j * (j0 + 1j * special.y0(kr))
    return val, -j0 / TWO_PI


def kprime_parts(r: np.ndarray, p: np.ndarray, k: float) -> tuple[np.ndarray, np.ndarray]:
    """``(K', L)`` for the normal-derivative kernel; ``p = nu(x).(x - y)``."""
    kr = k * r
    j1 = special.j1(kr)
    q = p / r
    val = -0.25j * k * (j1 + 1j * special.y1(kr)) * q
    return val, (k / TWO_PI) * j1 * q


def single_layer_diagonal(k: float) -> complex:
    """Smooth part ``S(x, x)`` of the single layer."""
    return 0.25j - (math.log(0.5 * k) + EULER_GAMMA) / TWO_PI


def kprime_diagonal(normal: np.ndarray, d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Limit of ``K'`` at coincident points: ``nu.x'' / (4 pi |x'|^2)``."""
    num = np.einsum("...i,...i->...", normal, d2)
    return num / (2.0 * TWO_PI * np.einsum("...i,...i->...", d1, d1))


# ---------------------------------------------------------------------------
# scalar API
# ---------------------------------------------------------------------------
def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    return d, float(np.hypot(d[0], d[1]))


def phi_k(x, y, k: float) -> complex:
    """Fundamental solution ``(i/4) H0(k|x - y|)``; ``x`` must differ from ``y``."""
    _, r = _pair(x, y)
    if r == 0.0:
        raise ValueError("fundamental solution is singular at x = y")
    return complex(single_layer_parts(np.array(r), k)[0])


def kernel_kprime(x, nu_x, y, k: float) -> complex:
    """``dPhi(x, y)/dnu(x)`` for ``x != y``."""
    d, r = _pair(x, y)
    if r == 0.0:
        raise ValueError("K' requires x != y; use log_split for the diagonal limit")
    p = float(np.dot(nu_x, d))
    return complex(kprime_parts(np.array(r), np.array(p), k)[0])


def kernel_kprime_reflected(x, nu_x, y, k: float) -> complex:
    """``K'`` evaluated at the mirror image ``(x1, -x2)`` with mirrored normal."""
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu_x, dtype=float)
    return kernel_kprime(x * [1.0, -1.0], nu * [1.0, -1.0], y, k)


def log_split(kernel: str, x, nu_x, y, k: float, curvature: float | None = None):
    """``(smooth_part, log_coefficient)`` with kernel ``= smooth_part + log|x - y| * log_coefficient``.

    ``kernel`` is ``"phi"`` or ``"kprime"``.  At ``x == y`` the smooth part is
    the diagonal limit; for ``"kprime"`` this needs the signed ``curvature``.
    """
    d, r = _pair(x, y)
    if kernel == "phi":
        if r == 0.0:
            return single_layer_diagonal(k), -1.0 / TWO_PI
        val, L = single_layer_parts(np.array(r), k)
        return complex(val - L * math.log(r)), float(L)
    if kernel == "kprime":
        if r == 0.0:
            if curvature is None:
                raise ValueError("curvature is required for the diagonal of K'")
            return complex(-curvature / (2.0 * TWO_PI)), 0.0
        p = float(np.dot(nu_x, d))
        val, L = kprime_parts(np.array(r), np.array(p), k)
        return complex(val - L * math.log(r)), float(L)
    raise ValueError(f"unknown kernel {kernel!r}")


# ---------------------------------------------------------------------------
# product-integration weights for log|t - tau| on [-1, 1]
# ---------------------------------------------------------------------------
_MP_DPS = 50
_TAU_QUANTUM = 2.0**-44


@lru_cache(maxsize=4)
def _vandermonde_inverse(n: int):
    nodes = gauss_legendre(n).nodes
    with mp.workdps(_MP_DPS):
        t = [mp.mpf(float(v)) for v in nodes]
        V = mp.matrix(n, n)
        for j in range(n):
            for m in range(n):
                V[m, j] = t[j] ** m  # row m: moment m, column j: node j
        return V**-1


def _log_moments(tau, n: int):
    """``int_{-1}^{1} t^m log|t - tau| dt`` for ``m < n`` in multiprecision."""
    one = mp.mpf(1)
    lm = mp.log(abs(one - tau)) if tau != one else None
    lp = mp.log(abs(one + tau)) if tau != -one else None
    # principal-value integrals Q_j = PV int t^j/(t - tau) dt, j = 0..n
    Q = []
    if tau == one or tau == -one:
        log_ratio = None
    else:
        log_ratio = mp.log(abs((one - tau) / (one + tau)))
    for j in range(n + 1):
        s = mp.mpf(0)
        for i in range(j):
            if i % 2 == 0:
                s += tau ** (j - 1 - i) * mp.mpf(2) / (i + 1)
        if log_ratio is not None:
            s += tau**j * log_ratio
        Q.append(s)
    out = []
    for m in range(n):
        sign = -1 if (m + 1) % 2 else 1  # (-1)^(m+1)
        bnd = mp.mpf(0)
        if lm is not None:
            bnd += lm
        if lp is not None:
            bnd -= sign * lp
        out.append((bnd - Q[m + 1]) / (m + 1))
    return out


@lru_cache(maxsize=None)
def _log_weights_cached(tau_q: float, n: int) -> np.ndarray:
    with mp.workdps(_MP_DPS):
        Vinv = _vandermonde_inverse(n)
        mom = _log_moments(mp.mpf(tau_q), n)
        w = np.array([float(sum(Vinv[j, m] * mom[m] for m in range(n))) for j in range(n)])
    w.flags.writeable = False
    return w


def log_weights(tau: float, n: int = NODES_PER_PANEL) -> np.ndarray:
    """Weights ``W_j`` with ``sum_j W_j f(t_j) = int_{-1}^{1} f(t) log|t - tau| dt``
    exact for polynomials ``f`` of degree < n, at the Gauss-Legendre nodes ``t_j``.

    ``tau`` is quantised to a 2^-44 grid before the multiprecision solve so that
    values equal up to rounding share a cache entry.  ``tau`` must not be
    ``+-1`` (the moments are finite there but endpoints never occur as targets).
    """
    tq = round(float(tau) / _TAU_QUANTUM) * _TAU_QUANTUM
    if abs(tq) == 1.0:
        raise ValueError("target coincides with a panel endpoint")
    return _log_weights_cached(tq, int(n))
