import math

import numpy as np
import pytest
from scipy import special

from roughsurf.errors import GeometryError
from roughsurf.geometry import SurfaceProfile, build_coarse_mesh, build_curves, refine_corner_mesh
from roughsurf.kernels import WaveContext
from roughsurf.nystrom import (
    DensitySolution,
    FarFieldSamples,
    assemble_A,
    assemble_G_planewave,
    assemble_G_pointsource,
    differentiation_matrix,
    farfield_matrix,
    field_at_points,
    lagrange_matrix,
    layer_matrix,
    restriction_matrix,
    tangential_derivatives,
    upper_directions,
)
from roughsurf.specfun import gauss_legendre


@pytest.fixture(scope="module")
def circle_mesh():
    curves = build_curves(SurfaceProfile("flat"), aux_center=(0.0, -0.5), aux_radius=0.1)
    return build_coarse_mesh(curves, 6, labels=("aux",))


@pytest.mark.parametrize("k", [1.0, 5.0, 20.0])
def test_single_layer_on_circle(circle_mesh, k):
    # constant density on a circle of radius a: S1 = (i pi a / 2) J0(ka) H0(ka)
    a = 0.1
    ctx = WaveContext(k, 1.0, a)
    S = layer_matrix(circle_mesh, ctx, "S")
    exact = 0.5j * math.pi * a * special.j0(k * a) * special.hankel1(0, k * a)
    np.testing.assert_allclose(S.sum(axis=1), exact, rtol=1e-13)


@pytest.mark.parametrize("k", [1.0, 5.0, 20.0])
def test_kprime_on_circle(circle_mesh, k):
    # boundary value of the normal derivative: mean of interior and exterior limits
    a = 0.1
    ctx = WaveContext(k, 1.0, a)
    K = layer_matrix(circle_mesh, ctx, "K")
    ka = k * a
    exact = -0.25j * math.pi * ka * (special.j0(ka) * special.hankel1(1, ka) + special.hankel1(0, ka) * special.j1(ka))
    np.testing.assert_allclose(K.sum(axis=1), exact, rtol=1e-12)


def test_log_corrections_matter(circle_mesh):
    ctx = WaveContext(5.0, 1.0, 0.1)
    S = layer_matrix(circle_mesh, ctx, "S", corrected=False)
    exact = 0.5j * math.pi * 0.1 * special.j0(0.5) * special.hankel1(0, 0.5)
    assert np.max(np.abs(S.sum(axis=1) - exact)) > 1e-4


def test_two_curve_is_leading_sub_block():
    curves = build_curves(SurfaceProfile("example1"))
    three = build_coarse_mesh(curves, 8)
    two = build_coarse_mesh(curves, 8, ("gamma", "arc"))
    ctx3 = WaveContext(3.0, 1.0, 0.1)
    ctx2 = WaveContext(3.0)
    A3 = assemble_A(three, ctx3)
    A2 = assemble_A(two, ctx2)
    n = len(two)
    np.testing.assert_allclose(A3[:n, :n], A2, rtol=0, atol=1e-15)


def test_planewave_rhs_vanishes_on_flat():
    mesh = build_coarse_mesh(build_curves(SurfaceProfile("flat")), 6)
    for theta in (0.0, 0.7, -1.2):
        G = assemble_G_planewave(mesh, WaveContext(4.0), theta)
        assert np.max(np.abs(G)) < 1e-14
    with pytest.raises(ValueError):
        assemble_G_planewave(mesh, WaveContext(4.0), math.pi / 2)


def test_planewave_rhs_matches_normal_derivative():
    mesh = build_coarse_mesh(build_curves(SurfaceProfile("example1")), 6)
    k, theta = 3.0, 0.4
    G = assemble_G_planewave(mesh, WaveContext(k), theta)
    idx = mesh.curve_nodes("gamma")
    d = np.array([math.sin(theta), -math.cos(theta)])
    dr = d * [1, -1]
    x, nu = mesh.pos[idx], mesh.normal[idx]
    e = 1e-6

    def u(p):
        return np.exp(1j * k * p @ d) + np.exp(1j * k * p @ dr)

    fd = (u(x + e * nu) - u(x - e * nu)) / (2 * e)
    np.testing.assert_allclose(G[idx], 2 * fd, atol=1e-7)
    assert np.all(G[mesh.curve_nodes("arc")] == 0) and np.all(G[mesh.curve_nodes("aux")] == 0)


def test_pointsource_rhs_rejects_surface_point():
    mesh = build_coarse_mesh(build_curves(SurfaceProfile("flat")), 6)
    with pytest.raises(GeometryError):
        assemble_G_pointsource(mesh, WaveContext(2.0), (0.3, 0.0))


def test_lagrange_and_differentiation_exact_for_polynomials():
    t = gauss_legendre(16).nodes
    x = np.linspace(-1, 1, 11)
    L = lagrange_matrix(x)
    D = differentiation_matrix()
    for m in range(16):
        np.testing.assert_allclose(L @ t**m, x**m, atol=1e-13)
        np.testing.assert_allclose(D @ t**m, m * t ** max(m - 1, 0) if m else 0 * t, atol=1e-10)
    np.testing.assert_array_equal(lagrange_matrix(t[3:4])[0], np.eye(16)[3])


def test_tangential_derivatives_on_curved_surface():
    p = SurfaceProfile("paper_s32")
    mesh = build_coarse_mesh(build_curves(p), 30, ("gamma",))
    idx = mesh.curve_nodes("gamma")
    x1 = mesh.pos[idx, 0]
    h, h1, h2 = p.derivatives(x1)
    speed = np.sqrt(1 + h1**2)
    f, f1, f2 = np.sin(3 * x1), 3 * np.cos(3 * x1), -9 * np.sin(3 * x1)
    us_exact = f1 / speed
    uss_exact = (f2 - f1 * h1 * h2 / speed**2) / speed**2
    us, uss = tangential_derivatives(f, mesh)
    np.testing.assert_allclose(us, us_exact, atol=1e-8)
    np.testing.assert_allclose(uss, uss_exact, atol=1e-5)
    both = tangential_derivatives(np.column_stack([f, 2 * f]), mesh)
    np.testing.assert_allclose(both[0][:, 1], 2 * us, rtol=0, atol=1e-10)


def test_upper_directions():
    d = upper_directions(4)
    np.testing.assert_allclose(np.arctan2(d[:, 1], d[:, 0]), (np.arange(1, 5) - 0.5) * np.pi / 4)
    np.testing.assert_allclose(np.hypot(*d.T), 1.0)
    with pytest.raises(ValueError):
        upper_directions(0)


def test_farfield_samples_validation(tmp_path):
    with pytest.raises(ValueError):
        FarFieldSamples(np.array([[1.0, 0.0]]), np.array([1.0]), 1.0)
    with pytest.raises(ValueError):
        FarFieldSamples(np.array([[0.0, 2.0]]), np.array([1.0]), 1.0)
    ff = FarFieldSamples(upper_directions(3), np.array([1 + 2j, 0.1, -1 / 3]), 1.0)
    ff.to_csv(tmp_path / "ff.csv")
    rows = (tmp_path / "ff.csv").read_text().splitlines()
    assert rows[0] == "angle,re,im"
    assert float(rows[3].split(",")[1]) == -1 / 3


def test_density_length_checked():
    mesh = build_coarse_mesh(build_curves(SurfaceProfile("flat")), 4)
    with pytest.raises(ValueError):
        DensitySolution(np.zeros(3), mesh)


def test_far_field_is_limit_of_near_field():
    curves = build_curves(SurfaceProfile("example1"))
    mesh = build_coarse_mesh(curves, 8)
    k = 4.0
    ctx = WaveContext(k, 1.0, 0.1)
    rng = np.random.default_rng(3)
    dens = DensitySolution(rng.standard_normal(len(mesh)) + 1j * rng.standard_normal(len(mesh)), mesh)
    xh = upper_directions(5)
    far = farfield_matrix(mesh, ctx, xh) @ dens.values
    r = 2e4
    near = field_at_points(dens, ctx, r * xh) * np.sqrt(r) * np.exp(-1j * k * r)
    np.testing.assert_allclose(near, far, rtol=1e-3)
    with pytest.raises(GeometryError):
        field_at_points(dens, ctx, [[0.0, float(SurfaceProfile("example1")(np.array([0.0]))[0]) + 1e-3]])


def test_restriction_reproduces_smooth_functions():
    coarse = build_coarse_mesh(build_curves(SurfaceProfile("paper_s32")), 8, ("gamma", "arc"))
    fine = refine_corner_mesh(coarse, 6)
    Q = restriction_matrix(coarse, fine, "gamma")
    fx = fine.pos[fine.curve_nodes("gamma"), 0]
    cx = coarse.pos[coarse.curve_nodes("gamma"), 0]
    np.testing.assert_allclose(Q @ np.cos(2 * fx), np.cos(2 * cx), atol=1e-12)
