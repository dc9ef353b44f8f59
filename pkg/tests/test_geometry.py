import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from roughsurf.errors import ConfigurationError, GeometryError
from roughsurf.geometry import (
    NODES_PER_PANEL,
    SurfaceProfile,
    bspline4,
    build_coarse_mesh,
    build_curves,
    refine_corner_mesh,
    spline_basis,
)

KNOTS = np.arange(-2.5, 2.51, 1.0)


def test_center_value():
    assert bspline4(0.0) == pytest.approx(115 / 192, abs=1e-15)


def test_values_against_scipy_bspline():
    ref = BSpline.basis_element(KNOTS, extrapolate=False)
    t = np.linspace(-2.49, 2.49, 301)
    for nu in range(4):
        expected = ref.derivative(nu)(t) if nu else ref(t)
        np.testing.assert_allclose(bspline4(t, nu), expected, atol=1e-13)


def test_frozen_integer_values():
    np.testing.assert_allclose(bspline4(np.array([-2, -1, 0, 1, 2])), [1 / 384, 19 / 96, 115 / 192, 19 / 96, 1 / 384],
                               rtol=0, atol=1e-14)


def test_support():
    t = np.array([-3.0, -2.5, 2.5, 3.0, 10.0])
    assert np.all(bspline4(t) == 0.0)
    assert bspline4(-2.4999) > 0 and bspline4(2.4999) > 0


def test_partition_of_unity():
    x = np.linspace(-3.0, 3.0, 100)
    total = sum(bspline4(x - j) for j in range(-8, 9))
    np.testing.assert_allclose(total, 1.0, atol=1e-12)


@pytest.mark.parametrize("knot", KNOTS)
def test_c3_continuity_across_knots(knot):
    for nu in range(4):
        for e in (1e-5, 1e-6):
            jump = abs(bspline4(knot + e, nu) - bspline4(knot - e, nu))
            assert jump < 10 * e
    # third derivative agrees with a centred difference of the second
    x = knot + 0.3
    e = 1e-5
    fd = (bspline4(x + e, 2) - bspline4(x - e, 2)) / (2 * e)
    assert fd == pytest.approx(float(bspline4(x, 3)), abs=1e-8)
    # the fourth derivative is piecewise constant and jumps at the knots
    if abs(knot) < 2.5:
        assert abs(bspline4(knot + 1e-3, 4) - bspline4(knot - 1e-3, 4)) > 1


def test_basis_layout():
    basis = spline_basis(40, 1.0)
    assert len(basis) == 40
    h = 2.0 / 45
    assert basis[0].center == pytest.approx(3 * h - 1)
    assert basis[-1].center == pytest.approx(42 * h - 1)
    assert basis[0].support[0] == pytest.approx(-1 + 0.5 * h)
    assert basis[-1].support[1] == pytest.approx(1 - 0.5 * h)
    with pytest.raises(ConfigurationError):
        spline_basis(0, 1.0)


def test_basis_derivative_scaling():
    b = spline_basis(10, 1.0)[4]
    x = np.linspace(*b.support, 50)
    e = 1e-6
    np.testing.assert_allclose((b(x + e) - b(x - e)) / (2 * e), b(x, 1), atol=1e-7)


@pytest.mark.parametrize("kind", ["example1", "example2", "example3", "paper_s32"])
def test_closed_form_derivatives(kind):
    p = SurfaceProfile(kind)
    x = np.linspace(-0.9, 0.9, 37)
    e = 1e-6
    h, h1, h2 = p.derivatives(x)
    np.testing.assert_allclose((p(x + e) - p(x - e)) / (2 * e), h1, atol=1e-6)
    np.testing.assert_allclose((p(x + e, 1) - p(x - e, 1)) / (2 * e), h2, atol=2e-5)
    lo, hi = p.support()
    outside = np.array([lo - 0.01, hi + 0.01])
    assert np.all(p(outside) == 0)


def test_example_values():
    # direct evaluation of the defining formulas
    bump = lambda x: math.exp(16 / (25 * x * x - 16))
    assert float(SurfaceProfile("paper_s32")(np.array([0.3]))[0]) == pytest.approx(bump(0.3) * math.sin(4 * math.pi * 0.3))
    assert float(SurfaceProfile("example2")(np.array([0.3]))[0]) == pytest.approx(0.5 * bump(0.3) * math.cos(4 * math.pi * 0.3))
    v = bump(0.3) * (0.5 + 0.1 * math.sin(16 * math.pi * 0.3)) * math.sin(math.pi * 0.3)
    assert float(SurfaceProfile("example3")(np.array([0.3]))[0]) == pytest.approx(v)
    e1 = bspline4((0.1 + 0.2) / 0.3) - 0.8 * bspline4((0.1 - 0.3) / 0.2)
    assert float(SurfaceProfile("example1")(np.array([0.1]))[0]) == pytest.approx(float(e1))


def test_spline_kind_needs_coefficients():
    with pytest.raises(ConfigurationError):
        SurfaceProfile("spline")
    with pytest.raises(ConfigurationError):
        SurfaceProfile("nope")
    with pytest.raises(ConfigurationError):
        SurfaceProfile("spline", 1.0, (1.0, math.nan))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.3, 0.3, allow_nan=False), min_size=1, max_size=12),
       st.sampled_from(["spline", "flat", "example1"]))
def test_profile_json_round_trip(coeffs, kind):
    p = SurfaceProfile(kind, 1.0, tuple(coeffs))
    q = SurfaceProfile.from_json(p.to_json())
    assert q == p
    x = np.linspace(-1, 1, 33)
    np.testing.assert_array_equal(p(x), q(x))
    json.loads(p.to_json())


def test_additive_coefficients():
    base = SurfaceProfile("example1")
    c = np.zeros(10)
    c[3] = 0.1
    p = base.with_coefficients(c)
    x = np.linspace(-1, 1, 41)
    np.testing.assert_allclose(p(x), base(x) + 0.1 * spline_basis(10, 1.0)[3](x), atol=1e-15)


def test_build_curves_rejects_bad_geometry():
    with pytest.raises(GeometryError):
        build_curves(SurfaceProfile("example1"), R=0.9)
    with pytest.raises(GeometryError):
        build_curves(SurfaceProfile("flat"), aux_center=(0.0, 0.2))
    with pytest.raises(GeometryError):
        build_curves(SurfaceProfile("flat"), aux_center=(0.0, -0.95))
    with pytest.raises(GeometryError):
        # disk pokes through the dip of the bump profile at x ~ 0.1 .. 0.3
        build_curves(SurfaceProfile("example1"), aux_center=(0.3, -0.35))


def test_curve_endpoints_and_normals():
    gamma, arc, aux = build_curves(SurfaceProfile("example1"))
    for c in (gamma, arc):
        lo, hi = c.param_range
        np.testing.assert_allclose(c.points([lo, hi]), [[-1, 0], [1, 0]], atol=1e-15)
    mid = arc.evaluate(np.array([1.5 * math.pi]), "")
    np.testing.assert_allclose(mid.normal, [[0, -1]], atol=1e-15)
    g = gamma.evaluate(np.array([0.0]), "")
    assert g.normal[0, 1] > 0


@pytest.mark.parametrize("anchor", ["A", "B"])
def test_anchored_evaluation_matches_global(anchor):
    gamma, arc, _ = build_curves(SurfaceProfile("paper_s32"))
    c = np.array([1e-9, 0.01, 0.3])
    for curve in (gamma, arc):
        pts = curve.evaluate(c, anchor)
        direct = curve.evaluate(curve.to_param(c, anchor), "")
        np.testing.assert_allclose(pts.pos, direct.pos, atol=1e-15)
        np.testing.assert_allclose(pts.normal, direct.normal, atol=1e-15)
        # anchored coordinates keep full relative accuracy near the corner
        assert np.linalg.norm(pts.rel[0]) < 2e-9


def test_coarse_mesh():
    curves = build_curves(SurfaceProfile("example1"))
    mesh = build_coarse_mesh(curves, 10)
    assert len(mesh) == 3 * 10 * NODES_PER_PANEL
    assert mesh.labels == ("gamma", "arc", "aux")
    assert mesh.arc_length("arc") == pytest.approx(math.pi, rel=1e-14)
    assert mesh.arc_length("aux") == pytest.approx(2 * math.pi * 0.1, rel=1e-14)
    assert np.all(np.diff(mesh.param(mesh.curve_nodes("gamma"))) > 0)
    for c in "AB":
        assert len(mesh.corner_star_panels(c)) == 4
    with pytest.raises(ConfigurationError):
        build_coarse_mesh(curves, 3)


def test_gamma_arc_length_against_quadrature():
    from scipy.integrate import quad

    p = SurfaceProfile("paper_s32")
    mesh = build_coarse_mesh(build_curves(p), 40, ("gamma",))
    exact, _ = quad(lambda x: math.sqrt(1 + float(p(np.array([x]), 1)[0]) ** 2), -1, 1, limit=400, epsabs=1e-13)
    assert mesh.arc_length("gamma") == pytest.approx(exact, rel=1e-11)


def test_refined_mesh():
    curves = build_curves(SurfaceProfile("flat"))
    coarse = build_coarse_mesh(curves, 8)
    fine = refine_corner_mesh(coarse, 5)
    # 4 corner panels (2 curves x 2 corners) each become 6 panels
    assert len(fine.panels) == len(coarse.panels) + 4 * 5
    assert fine.arc_length("arc") == pytest.approx(math.pi, rel=1e-14)
    smallest = min(p.half for p in fine.panels) * 2
    assert smallest == pytest.approx((2.0 / 8) / 2**5)
    assert all(0 <= p.parent < len(coarse.panels) for p in fine.panels)
    assert refine_corner_mesh(coarse, 0).panels == tuple(
        type(p)(p.curve, p.anchor, p.c0, p.c1, i) for i, p in enumerate(coarse.panels))
