"""Bessel/Hankel functions of orders 0 and 1 and Gauss-Legendre rules.

The scalar entry points validate their argument; the array versions used by
the kernel assembly skip validation and go straight to the Cephes routines
shipped with scipy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

__all__ = [
    "QuadratureRule",
    "bessel_j0j1",
    "bessel_y0y1",
    "hankel1",
    "gauss_legendre",
    "h0",
    "h1",
    "J0_FIRST_ZERO",
]

J0_FIRST_ZERO = 2.404825557695773


def _check_argument(x: float) -> float:
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise ValueError(f"Bessel argument must be finite and positive, got {x!r}")
    return x


def bessel_j0j1(x: float) -> tuple[float, float]:
    """Return ``(J0(x), J1(x))`` for ``x > 0``."""
    x = _check_argument(x)
    return float(special.j0(x)), float(special.j1(x))


def bessel_y0y1(x: float) -> tuple[float, float]:
    """Return ``(Y0(x), Y1(x))`` for ``x > 0``."""
    x = _check_argument(x)
    return float(special.y0(x)), float(special.y1(x))


def hankel1(order: int, x: float) -> complex:
    """Hankel function of the first kind, ``J_n(x) + i Y_n(x)``, for n in {0, 1}."""
    if order not in (0, 1):
        raise ValueError(f"only orders 0 and 1 are supported, got {order!r}")
    x = _check_argument(x)
    if order == 0:
        return complex(special.j0(x), special.y0(x))
    return complex(special.j1(x), special.y1(x))


def h0(z: np.ndarray) -> np.ndarray:
    """Vectorised H0^(1) for positive real arrays (no validation)."""
    return special.j0(z) + 1j * special.y0(z)


def h1(z: np.ndarray) -> np.ndarray:
    """Vectorised H1^(1) for positive real arrays (no validation)."""
    return special.j1(z) + 1j * special.y1(z)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on [-1, 1]."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=None)
def _leggauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(order)
    # leggauss is symmetric only up to rounding; enforce it exactly
    t = 0.5 * (t - t[::-1])
    w = 0.5 * (w + w[::-1])
    t.flags.writeable = False
    w.flags.writeable = False
    return t, w


def gauss_legendre(order: int) -> QuadratureRule:
    """Standard ``order``-point Gauss-Legendre rule, 1 <= order <= 64."""
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)):
        raise ValueError(f"quadrature order must be an integer, got {order!r}")
    if not 1 <= order <= 64:
        raise ValueError(f"quadrature order must lie in [1, 64], got {order}")
    t, w = _leggauss(int(order))
    return QuadratureRule(int(order), t, w)
