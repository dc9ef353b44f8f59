"""Surface profiles, boundary curves and panel meshes.

The truncated boundary consists of three curves:

* ``gamma`` -- the rough part of the surface, ``(x1, h(x1))`` for ``|x1| <= R``,
  normal pointing up into the propagation domain;
* ``arc``   -- the lower half circle ``|x| = R, x2 < 0`` with outward radial
  normal, parameterised by the angle in ``[pi, 2 pi]``;
* ``aux``   -- a small circle strictly inside the region below the surface,
  outward normal, parameterised by the angle in ``[0, 2 pi]``.

Panels on ``gamma`` and ``arc`` are *anchored* at the nearer corner
``x_A = (-R, 0)`` or ``x_B = (R, 0)``: their nodes are stored through the
offset from the corner ("native" coordinate), so that dyadically refined
panels of size ~1e-10 keep full relative precision.  Panels on ``aux`` are
anchored at the circle centre.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.special import comb

from .errors import ConfigurationError, GeometryError
from .specfun import gauss_legendre

__all__ = [
    "GeometryError",
    "ConfigurationError",
    "bspline4",
    "spline_basis",
    "SplineBasisFunction",
    "SurfaceProfile",
    "Curve",
    "Panel",
    "PanelMesh",
    "build_curves",
    "build_coarse_mesh",
    "refine_corner_mesh",
    "panel_mesh",
    "NODES_PER_PANEL",
]

NODES_PER_PANEL = 16
CURVE_ORDER = ("gamma", "arc", "aux")
BUMP_HALF_WIDTH = 0.8


# ---------------------------------------------------------------------------
# Quartic B-spline
# ---------------------------------------------------------------------------
_SPLINE_DEGREE = 4
_SPLINE_COEFFS = np.array(
    [(-1) ** j * comb(_SPLINE_DEGREE + 1, j, exact=True) for j in range(_SPLINE_DEGREE + 2)],
    dtype=float,
) / math.factorial(_SPLINE_DEGREE)
_SPLINE_SHIFTS = (_SPLINE_DEGREE + 1) / 2.0 - np.arange(_SPLINE_DEGREE + 2)


def bspline4(t, nu: int = 0) -> np.ndarray:
    """Centred quartic B-spline (support ``(-2.5, 2.5)``) or its ``nu``-th derivative.

    Evaluates the truncated-power sum
    ``sum_j (-1)^j/4! C(5,j) (t + 5/2 - j)_+^4`` directly.
    """
    if not 0 <= nu <= _SPLINE_DEGREE:
        raise ValueError(f"derivative order must be in [0, 4], got {nu}")
    t = np.asarray(t, dtype=float)
    z = t[..., None] + _SPLINE_SHIFTS
    p = _SPLINE_DEGREE - nu
    scale = math.factorial(_SPLINE_DEGREE) / math.factorial(p)
    zp = np.where(z >= 0.0, z, 0.0)
    powers = zp**p if p > 0 else (z >= 0.0).astype(float)
    out = scale * (powers @ _SPLINE_COEFFS)
    # the truncated-power sum cancels to rounding level outside the support
    return np.where(np.abs(t) < 2.5, out, 0.0)


@dataclass(frozen=True)
class SplineBasisFunction:
    """``phi((x - center) / spacing)`` for the quartic B-spline ``phi``."""

    center: float
    spacing: float

    def __call__(self, x, nu: int = 0) -> np.ndarray:
        u = (np.asarray(x, dtype=float) - self.center) / self.spacing
        return bspline4(u, nu) / self.spacing**nu

    @property
    def support(self) -> tuple[float, float]:
        return self.center - 2.5 * self.spacing, self.center + 2.5 * self.spacing


def spline_basis(M: int, support_radius: float) -> list[SplineBasisFunction]:
    """The ``M`` shifted quartic B-splines spanning the profile space on ``(-R, R)``.

    Spacing ``2R/(M+5)``, centres ``t_i = (i+2) * spacing - R`` for ``i = 1..M``.
    """
    if isinstance(M, bool) or int(M) != M or M < 1:
        raise ConfigurationError(f"number of spline basis functions must be >= 1, got {M!r}")
    R = float(support_radius)
    if not R > 0:
        raise ConfigurationError(f"support radius must be positive, got {support_radius!r}")
    spacing = 2.0 * R / (M + 5)
    return [SplineBasisFunction((i + 2) * spacing - R, spacing) for i in range(1, int(M) + 1)]


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------
def _bump(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """exp(16/(25x^2-16)) on |x| < 4/5 (zero outside) and two derivatives."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < BUMP_HALF_WIDTH
    xi = np.where(inside, x, 0.0)
    q = 25.0 * xi**2 - 16.0
    g = 16.0 / q
    g1 = -800.0 * xi / q**2
    g2 = 800.0 * (75.0 * xi**2 + 16.0) / q**3
    b = np.where(inside, np.exp(g), 0.0)
    return b, b * g1, b * (g2 + g1**2)


def _product(f, g):
    """Value and first two derivatives of f*g from (f, f', f'') and (g, g', g'')."""
    return (
        f[0] * g[0],
        f[1] * g[0] + f[0] * g[1],
        f[2] * g[0] + 2.0 * f[1] * g[1] + f[0] * g[2],
    )


def _sin(a: float, x):
    s, c = np.sin(a * x), np.cos(a * x)
    return s, a * c, -a * a * s


def _cos(a: float, x):
    s, c = np.sin(a * x), np.cos(a * x)
    return c, -a * s, -a * a * c


def _example1(x):
    s1, s2 = 0.3, 0.2
    u1, u2 = (x + 0.2) / s1, (x - 0.3) / s2
    return tuple(bspline4(u1, n) / s1**n - 0.8 * bspline4(u2, n) / s2**n for n in range(3))


def _example2(x):
    b, c = _bump(x), _cos(4.0 * np.pi, x)
    return tuple(0.5 * v for v in _product(b, c))


def _example3(x):
    b = _bump(x)
    s16 = _sin(16.0 * np.pi, x)
    macro = (0.5 + 0.1 * s16[0], 0.1 * s16[1], 0.1 * s16[2])
    return _product(_product(b, macro), _sin(np.pi, x))


def _paper_s32(x):
    return _product(_bump(x), _sin(4.0 * np.pi, x))


_CLOSED_FORMS = {
    "example1": (_example1, (-0.95, 0.8)),
    "example2": (_example2, (-BUMP_HALF_WIDTH, BUMP_HALF_WIDTH)),
    "example3": (_example3, (-BUMP_HALF_WIDTH, BUMP_HALF_WIDTH)),
    "paper_s32": (_paper_s32, (-BUMP_HALF_WIDTH, BUMP_HALF_WIDTH)),
}
PROFILE_KINDS = ("flat", "example1", "example2", "example3", "paper_s32", "spline")


@dataclass(frozen=True)
class SurfaceProfile:
    """Compactly supported surface height ``h(x1)``.

    ``R`` is the truncation radius.  ``coefficients`` add
    ``sum_i a_i phi_{i,M}`` (``M = len(coefficients)``) to the closed form;
    the ``spline`` kind is that sum alone.
    """

    kind: str = "flat"
    R: float = 1.0
    coefficients: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ConfigurationError(f"unknown profile kind {self.kind!r}; expected one of {PROFILE_KINDS}")
        if not (math.isfinite(self.R) and self.R > 0):
            raise ConfigurationError(f"R must be positive, got {self.R!r}")
        coeffs = tuple(float(a) for a in self.coefficients)
        if self.kind == "spline" and len(coeffs) < 1:
            raise ConfigurationError("spline profile needs at least one coefficient")
        if not all(math.isfinite(a) for a in coeffs):
            raise ConfigurationError("spline coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def spline(cls, coefficients: Sequence[float], R: float = 1.0) -> "SurfaceProfile":
        return cls("spline", float(R), tuple(coefficients))

    def with_coefficients(self, coefficients: Sequence[float]) -> "SurfaceProfile":
        """Same closed form with a different spline perturbation."""
        return SurfaceProfile(self.kind, self.R, tuple(coefficients))

    @cached_property
    def basis(self) -> list[SplineBasisFunction]:
        if not self.coefficients:
            return []
        return spline_basis(len(self.coefficients), self.R)

    def derivatives(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(h, h', h'')`` at ``x``."""
        x = np.asarray(x, dtype=float)
        if self.kind in ("flat", "spline"):
            out = [np.zeros_like(x) for _ in range(3)]
        else:
            out = [np.array(v, dtype=float) for v in _CLOSED_FORMS[self.kind][0](x)]
        for a, phi in zip(self.coefficients, self.basis):
            if a == 0.0:
                continue
            for n in range(3):
                out[n] += a * phi(x, n)
        return tuple(out)

    def __call__(self, x, nu: int = 0) -> np.ndarray:
        if nu > 2:
            if self.kind not in ("flat", "spline"):
                raise ValueError("closed-form profiles provide derivatives up to order 2")
            x = np.asarray(x, dtype=float)
            return sum((a * phi(x, nu) for a, phi in zip(self.coefficients, self.basis)), np.zeros_like(x))
        return self.derivatives(x)[nu]

    def support(self) -> tuple[float, float]:
        """An interval containing ``supp(h)`` (empty interval ``(0, 0)`` when flat)."""
        parts = [phi.support for a, phi in zip(self.coefficients, self.basis) if a != 0.0]
        if self.kind not in ("flat", "spline"):
            parts.append(_CLOSED_FORMS[self.kind][1])
        if not parts:
            return (0.0, 0.0)
        return min(s[0] for s in parts), max(s[1] for s in parts)

    @property
    def support_radius(self) -> float:
        lo, hi = self.support()
        return max(abs(lo), abs(hi))

    # -- JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"kind": self.kind, "R": self.R}
        if self.coefficients:
            d["coefficients"] = list(self.coefficients)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SurfaceProfile":
        if "kind" not in d:
            raise ConfigurationError("profile description lacks 'kind'")
        return cls(d["kind"], float(d.get("R", 1.0)), tuple(d.get("coefficients", ())))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SurfaceProfile":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CurvePoints:
    """Geometric data at a set of curve points.

    ``rel`` is the position relative to the anchor point ``origin``; ``pos``
    the absolute position.  ``d1``/``d2`` are the first and second derivatives
    with respect to the curve parameter.
    """

    origin: np.ndarray
    rel: np.ndarray
    normal: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    @property
    def pos(self) -> np.ndarray:
        return self.origin + self.rel

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.d1[:, 0], self.d1[:, 1])


@dataclass(frozen=True)
class Curve:
    """One of the three boundary curves.

    ``label`` is ``"gamma"``, ``"arc"`` or ``"aux"``.  ``param_range`` is the
    parameter interval (``x1`` for gamma, polar angle for the circles).
    """

    label: str
    R: float
    profile: SurfaceProfile | None = None
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0

    @property
    def param_range(self) -> tuple[float, float]:
        if self.label == "gamma":
            return (-self.R, self.R)
        if self.label == "arc":
            return (math.pi, 2.0 * math.pi)
        return (0.0, 2.0 * math.pi)

    @property
    def closed(self) -> bool:
        return self.label == "aux"

    def anchor_point(self, anchor: str) -> np.ndarray:
        if anchor == "A":
            return np.array([-self.R, 0.0])
        if anchor == "B":
            return np.array([self.R, 0.0])
        if anchor == "C":
            return np.array(self.center, dtype=float)
        return np.zeros(2)

    def to_param(self, native, anchor: str):
        """Curve parameter from the anchored (native) coordinate."""
        lo, hi = self.param_range
        if anchor == "A":
            return lo + native
        if anchor == "B":
            return hi - native
        return native

    def evaluate(self, native, anchor: str) -> CurvePoints:
        c = np.atleast_1d(np.asarray(native, dtype=float))
        origin = self.anchor_point(anchor)
        if self.label == "gamma":
            x1 = self.to_param(c, anchor)
            h, h1, h2 = self.profile.derivatives(x1)
            if anchor == "A":
                rx = c
            elif anchor == "B":
                rx = -c
            else:
                rx = x1
            rel = np.column_stack([rx, h])
            d1 = np.column_stack([np.ones_like(h1), h1])
            d2 = np.column_stack([np.zeros_like(h2), h2])
            s = np.sqrt(1.0 + h1**2)
            normal = np.column_stack([-h1 / s, 1.0 / s])
        elif self.label == "arc":
            R = self.R
            if anchor == "A":
                ca, sa = -np.cos(c), -np.sin(c)
                rel = np.column_stack([2.0 * R * np.sin(0.5 * c) ** 2, -R * np.sin(c)])
            elif anchor == "B":
                ca, sa = np.cos(c), -np.sin(c)
                rel = np.column_stack([-2.0 * R * np.sin(0.5 * c) ** 2, -R * np.sin(c)])
            else:
                ca, sa = np.cos(c), np.sin(c)
                rel = R * np.column_stack([ca, sa])
            normal = np.column_stack([ca, sa])
            d1 = R * np.column_stack([-sa, ca])
            d2 = -R * normal
        else:
            r = self.radius
            ca, sa = np.cos(c), np.sin(c)
            normal = np.column_stack([ca, sa])
            rel = r * normal
            if anchor != "C":
                rel = rel + np.asarray(self.center)
            d1 = r * np.column_stack([-sa, ca])
            d2 = -r * normal
        return CurvePoints(origin, rel, normal, d1, d2)

    def points(self, param) -> np.ndarray:
        """Absolute positions at curve parameters (unanchored evaluation)."""
        return self.evaluate(param, "").pos


def build_curves(
    profile: SurfaceProfile,
    R: float | None = None,
    aux_center: Sequence[float] = (0.0, -0.5),
    aux_radius: float = 0.1,
) -> tuple[Curve, Curve, Curve]:
    """Construct ``(gamma, arc, aux)`` and check the geometric preconditions.

    Raises :class:`GeometryError` if ``supp(h)`` is not inside ``(-R, R)``, if
    the profile leaves the disk ``B_R``, or if the auxiliary disk is not
    strictly inside the region below the surface and inside ``B_R``.
    """
    R = float(profile.R if R is None else R)
    if not R > 0:
        raise GeometryError(f"R must be positive, got {R}")
    if profile.R != R:
        profile = SurfaceProfile(profile.kind, R, profile.coefficients)
    lo, hi = profile.support()
    if lo < hi and not (-R < lo and hi < R):
        raise GeometryError(f"supp(h) = [{lo}, {hi}] is not contained in (-R, R) = ({-R}, {R})")
    xs = np.linspace(-R, R, 4001)[1:-1]
    hs = profile(xs)
    if np.any(np.abs(hs) >= np.sqrt(R * R - xs * xs)):
        raise GeometryError("surface profile leaves the disk B_R")

    gamma = Curve("gamma", R, profile=profile)
    arc = Curve("arc", R)
    cx, cy = (float(v) for v in aux_center)
    r = float(aux_radius)
    if not r > 0:
        raise GeometryError(f"auxiliary radius must be positive, got {aux_radius!r}")
    aux = Curve("aux", R, center=(cx, cy), radius=r)

    # the closed auxiliary disk must lie below the surface and inside B_R
    theta = np.linspace(0.0, 2.0 * np.pi, 721)
    ring = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
    if np.hypot(cx, cy) + r >= R:
        raise GeometryError("auxiliary disk is not strictly inside B_R")
    if np.any(ring[:, 1] >= profile(ring[:, 0])) or cy >= float(profile(np.array([cx]))[0]):
        raise GeometryError("auxiliary disk is not strictly below the surface")
    # sample the disk interior along the vertical through the ring points
    xs_disk = np.linspace(cx - r, cx + r, 201)
    top = cy + np.sqrt(np.maximum(r * r - (xs_disk - cx) ** 2, 0.0))
    if np.any(top >= profile(xs_disk)):
        raise GeometryError("auxiliary disk is not strictly below the surface")
    return gamma, arc, aux


# ---------------------------------------------------------------------------
# Panels and meshes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Panel:
    """A parameter interval on one curve.

    ``c0``/``c1`` are the native coordinates at local ``t = -1`` and ``t = +1``;
    the native coordinate is the corner offset for anchors ``A``/``B`` and the
    plain parameter otherwise.  ``parent`` indexes the coarse panel a
    refined panel came from.
    """

    curve: str
    anchor: str
    c0: float
    c1: float
    parent: int = -1

    @property
    def half(self) -> float:
        return 0.5 * abs(self.c1 - self.c0)

    def native(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return 0.5 * (self.c0 + self.c1) + 0.5 * (self.c1 - self.c0) * t

    def local(self, native) -> np.ndarray:
        """Local coordinate of a native coordinate (same anchor)."""
        return (2.0 * np.asarray(native, dtype=float) - self.c0 - self.c1) / (self.c1 - self.c0)

    def contains(self, other: "Panel") -> bool:
        if other.curve != self.curve or other.anchor != self.anchor:
            return False
        a, b = sorted((self.c0, self.c1))
        c, d = sorted((other.c0, other.c1))
        return a <= c and d <= b

    def touches(self, other: "Panel") -> bool:
        """Share an endpoint (same curve and anchor frame)."""
        if other.curve != self.curve or other.anchor != self.anchor:
            return False
        return bool({self.c0, self.c1} & {other.c0, other.c1})


def _param_interval(curve: Curve, p: Panel) -> tuple[float, float]:
    a, b = curve.to_param(p.c0, p.anchor), curve.to_param(p.c1, p.anchor)
    return (a, b) if a <= b else (b, a)


class PanelMesh:
    """Ordered panels on a subset of the curves, with node data.

    Node data are stored as flat arrays in panel order, 16 Gauss-Legendre
    nodes per panel.  ``weights`` include the speed ``|x'(t)|`` (arc-length
    quadrature); ``param_weights`` do not.
    """

    def __init__(
        self,
        curves: dict[str, Curve],
        panels: Sequence[Panel],
        level: str = "coarse",
        n_pan: int = 0,
        n_sub: int = 0,
    ):
        self.curves = dict(curves)
        self.panels = tuple(panels)
        self.level = level
        self.n_pan = n_pan
        self.n_sub = n_sub
        rule = gauss_legendre(NODES_PER_PANEL)
        self.gl_nodes, self.gl_weights = rule.nodes, rule.weights

        rel, pos, nrm, d1, d2, pw = [], [], [], [], [], []
        for p in self.panels:
            pts = self.curves[p.curve].evaluate(p.native(self.gl_nodes), p.anchor)
            rel.append(pts.rel)
            pos.append(pts.pos)
            nrm.append(pts.normal)
            d1.append(pts.d1)
            d2.append(pts.d2)
            pw.append(self.gl_weights * p.half)
        n = len(self.panels) * NODES_PER_PANEL
        self.rel = np.concatenate(rel) if rel else np.zeros((0, 2))
        self.pos = np.concatenate(pos) if pos else np.zeros((0, 2))
        self.normal = np.concatenate(nrm) if nrm else np.zeros((0, 2))
        self.d1 = np.concatenate(d1) if d1 else np.zeros((0, 2))
        self.d2 = np.concatenate(d2) if d2 else np.zeros((0, 2))
        self.param_weights = np.concatenate(pw) if pw else np.zeros(0)
        self.speed = np.hypot(self.d1[:, 0], self.d1[:, 1])
        self.weights = self.param_weights * self.speed
        self.panel_index = np.repeat(np.arange(len(self.panels)), NODES_PER_PANEL)
        self.t_local = np.tile(self.gl_nodes, len(self.panels))
        self.curve_of_node = np.repeat(np.array([p.curve for p in self.panels], dtype=object), NODES_PER_PANEL)
        self.anchor_of_node = np.repeat(np.array([p.anchor for p in self.panels], dtype=object), NODES_PER_PANEL)
        assert self.rel.shape == (n, 2)

    # -- bookkeeping ------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.panels) * NODES_PER_PANEL

    @property
    def n_nodes(self) -> int:
        return len(self)

    def curve_nodes(self, label: str) -> np.ndarray:
        return np.flatnonzero(self.curve_of_node == label)

    def curve_panels(self, label: str) -> list[int]:
        return [i for i, p in enumerate(self.panels) if p.curve == label]

    def panel_nodes(self, i: int) -> np.ndarray:
        return np.arange(i * NODES_PER_PANEL, (i + 1) * NODES_PER_PANEL)

    @property
    def labels(self) -> tuple[str, ...]:
        seen = []
        for p in self.panels:
            if p.curve not in seen:
                seen.append(p.curve)
        return tuple(seen)

    def param(self, idx=None) -> np.ndarray:
        """Curve parameter at the nodes."""
        out = np.empty(len(self))
        for i, p in enumerate(self.panels):
            out[i * NODES_PER_PANEL:(i + 1) * NODES_PER_PANEL] = self.curves[p.curve].to_param(
                p.native(self.gl_nodes), p.anchor
            )
        return out if idx is None else out[idx]

    def corner_star_panels(self, corner: str) -> list[int]:
        """Panels within two coarse panel lengths of ``corner`` on gamma and arc."""
        if self.n_pan < 1:
            return []
        out = []
        for i, p in enumerate(self.panels):
            if p.anchor != corner or p.curve not in ("gamma", "arc"):
                continue
            H = coarse_panel_length(self.curves[p.curve], self.n_pan)
            if max(p.c0, p.c1) <= 2.0 * H * (1.0 + 1e-12):
                out.append(i)
        return out

    def corner_star_nodes(self, corner: str) -> np.ndarray:
        idx = self.corner_star_panels(corner)
        if not idx:
            return np.zeros(0, dtype=int)
        return np.concatenate([self.panel_nodes(i) for i in idx])

    def subset(self, labels: Iterable[str]) -> "PanelMesh":
        labels = tuple(labels)
        keep = [p for p in self.panels if p.curve in labels]
        return PanelMesh(self.curves, keep, self.level, self.n_pan, self.n_sub)

    def arc_length(self, label: str) -> float:
        return float(self.weights[self.curve_nodes(label)].sum())

    def __repr__(self) -> str:
        return (
            f"PanelMesh(level={self.level!r}, panels={len(self.panels)}, nodes={len(self)}, "
            f"n_pan={self.n_pan}, n_sub={self.n_sub})"
        )


def coarse_panel_length(curve: Curve, n_pan: int) -> float:
    lo, hi = curve.param_range
    return (hi - lo) / n_pan


def _sort_key(curve: Curve, p: Panel):
    a, b = _param_interval(curve, p)
    return (CURVE_ORDER.index(p.curve), 0.5 * (a + b))


def panel_mesh(curves: dict[str, Curve], panels: Sequence[Panel], **kw) -> PanelMesh:
    """Mesh from panels, sorted by curve then increasing parameter."""
    ordered = sorted(panels, key=lambda p: _sort_key(curves[p.curve], p))
    return PanelMesh(curves, ordered, **kw)


def _curve_dict(curves) -> dict[str, Curve]:
    if isinstance(curves, dict):
        return dict(curves)
    return {c.label: c for c in curves}


def build_coarse_mesh(curves, n_pan: int, labels: Sequence[str] | None = None) -> PanelMesh:
    """``n_pan`` panels of equal parameter length on each curve.

    Panels on gamma and arc in the left half are anchored at ``x_A``, the rest
    at ``x_B``.  At least four panels per curve are needed so that the
    two-panel corner neighbourhoods of ``x_A`` and ``x_B`` do not overlap.
    """
    if isinstance(n_pan, bool) or int(n_pan) != n_pan or n_pan < 4:
        raise ConfigurationError(f"n_pan must be an integer >= 4, got {n_pan!r}")
    n_pan = int(n_pan)
    curves = _curve_dict(curves)
    labels = tuple(labels) if labels is not None else tuple(l for l in CURVE_ORDER if l in curves)
    panels = []
    for label in labels:
        curve = curves[label]
        lo, hi = curve.param_range
        H = (hi - lo) / n_pan
        for i in range(n_pan):
            if label == "aux":
                panels.append(Panel("aux", "C", lo + i * H, lo + (i + 1) * H))
            elif 2 * i + 1 < n_pan:
                panels.append(Panel(label, "A", i * H, (i + 1) * H))
            else:
                j = n_pan - i
                panels.append(Panel(label, "B", j * H, (j - 1) * H))
    return panel_mesh(curves, panels, level="coarse", n_pan=n_pan, n_sub=0)


def _halvings(p: Panel, n_sub: int, parent: int) -> list[Panel]:
    """Dyadic refinement of a corner panel with native range [0, H]."""
    H = max(p.c0, p.c1)
    forward = p.c0 < p.c1  # t increases away from the corner
    out = []
    edges = [H / 2.0**m for m in range(n_sub + 1)] + [0.0]
    for a, b in zip(edges[1:], edges[:-1]):
        lo_c, hi_c = (a, b) if forward else (b, a)
        out.append(Panel(p.curve, p.anchor, lo_c, hi_c, parent))
    return out


def refine_corner_mesh(coarse: PanelMesh, n_sub: int) -> PanelMesh:
    """Fine mesh: the panel touching each corner on gamma and arc halved ``n_sub`` times.

    Panels keep a ``parent`` link to their coarse panel.
    """
    if coarse.level != "coarse":
        raise ConfigurationError("refine_corner_mesh expects a coarse mesh")
    if isinstance(n_sub, bool) or int(n_sub) != n_sub or n_sub < 0:
        raise ConfigurationError(f"n_sub must be a non-negative integer, got {n_sub!r}")
    n_sub = int(n_sub)
    panels = []
    for i, p in enumerate(coarse.panels):
        at_corner = p.anchor in ("A", "B") and min(p.c0, p.c1) == 0.0
        if at_corner and n_sub > 0:
            panels.extend(_halvings(p, n_sub, i))
        else:
            panels.append(Panel(p.curve, p.anchor, p.c0, p.c1, i))
    return panel_mesh(coarse.curves, panels, level="fine", n_pan=coarse.n_pan, n_sub=n_sub)
