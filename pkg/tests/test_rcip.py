import numpy as np
import pytest

from roughsurf.errors import StateError
from roughsurf.geometry import SurfaceProfile, build_coarse_mesh, build_curves, refine_corner_mesh
from roughsurf.kernels import WaveContext
from roughsurf.nystrom import (
    BlockSystem,
    assemble_A,
    assemble_G_planewave,
    farfield_matrix,
    upper_directions,
)
from roughsurf.rcip import (
    CORNERS,
    PreconditionedSolver,
    compute_R,
    direct_R,
    kernel_split,
    prolongation,
    reconstruct_fine_density,
    star_mesh,
)


def setup(kind="paper_s32", n_pan=8, k=5.0, labels=("gamma", "arc", "aux")):
    curves = build_curves(SurfaceProfile(kind))
    mesh = build_coarse_mesh(curves, n_pan, labels)
    ctx = WaveContext(k, 1.0, 0.1 if "aux" in labels else None)
    return curves, mesh, ctx


def test_prolongation_weighted_transpose_is_left_inverse():
    curves, mesh, _ = setup()
    H = 2.0 / 8
    top = star_mesh(mesh.curves, "A", {"gamma": [0, H, 2 * H], "arc": [0, np.pi / 8, np.pi / 4]})
    edges = {a: [0.0] + [h / 2**m for m in range(4, -1, -1)] + [2 * h] for a, h in (("gamma", H), ("arc", np.pi / 8))}
    fine = star_mesh(mesh.curves, "A", edges)
    pp = prolongation(top, fine)
    np.testing.assert_allclose(pp.PWT @ pp.P, np.eye(len(top)), atol=1e-13)


def test_kernel_split_partitions_operator():
    _, mesh, ctx = setup()
    A = assemble_A(mesh, ctx)
    star, circ = kernel_split(A, mesh)
    np.testing.assert_array_equal(star + circ, A)
    for c in CORNERS:
        idx = mesh.corner_star_nodes(c)
        assert len(idx) == 64
        assert np.all(circ[np.ix_(idx, idx)] == 0)


@pytest.mark.parametrize("kind", ["paper_s32", "flat"])
@pytest.mark.parametrize("n_sub", [1, 3, 6])
def test_recursion_matches_direct_inverse(kind, n_sub):
    _, mesh, ctx = setup(kind)
    R = compute_R(mesh, ctx, n_sub)
    ref = direct_R(mesh, ctx, n_sub)
    for c in CORNERS:
        _, Rc = R.blocks[c]
        assert np.linalg.norm(Rc - ref[c]) / np.linalg.norm(Rc) < 1e-10


def test_zero_levels_is_plain_inverse():
    _, mesh, ctx = setup()
    R = compute_R(mesh, ctx, 0)
    A = assemble_A(mesh, ctx)
    for c in CORNERS:
        idx, Rc = R.blocks[c]
        np.testing.assert_allclose(Rc, np.linalg.inv(np.eye(len(idx)) + A[np.ix_(idx, idx)]), atol=1e-12)


def _direct_fine(mesh, ctx, n_sub, theta):
    fine = refine_corner_mesh(mesh, n_sub)
    phi = np.linalg.solve(np.eye(len(fine)) + assemble_A(fine, ctx), assemble_G_planewave(fine, ctx, theta))
    return fine, phi


def test_compressed_solve_matches_fine_solve():
    _, mesh, ctx = setup(n_pan=20, k=5.0)
    n_sub, theta = 8, 0.3
    system = BlockSystem(np.eye(len(mesh)) + assemble_A(mesh, ctx), assemble_G_planewave(mesh, ctx, theta), mesh,
                         "three-curve")
    R = compute_R(mesh, ctx, n_sub)
    solver = PreconditionedSolver(system, R)
    tilde, phys = solver.solve(system.rhs)
    assert solver.rcond > 1e-6
    fine, phi_fine = _direct_fine(mesh, ctx, n_sub, theta)
    dirs = upper_directions(7)
    far_c = farfield_matrix(mesh, ctx, dirs) @ phys
    far_f = farfield_matrix(fine, ctx, dirs) @ phi_fine
    assert np.max(np.abs(far_c - far_f)) / np.max(np.abs(far_f)) < 1e-12
    rec = reconstruct_fine_density(tilde, R, fine)
    assert np.max(np.abs(rec.values - phi_fine)) / np.max(np.abs(phi_fine)) < 1e-11
    # several right-hand sides at once
    G2 = np.column_stack([system.rhs, 2 * system.rhs])
    t2, p2 = solver.solve(G2)
    np.testing.assert_allclose(p2[:, 1], 2 * phys, atol=1e-12)
    rec2 = reconstruct_fine_density(t2, R, fine)
    np.testing.assert_allclose(rec2.values[:, 0], rec.values, atol=1e-12)


def test_mesh_mismatch_is_a_state_error():
    _, mesh, ctx = setup(n_pan=8)
    _, other, _ = setup(n_pan=10)
    R = compute_R(mesh, ctx, 2)
    system = BlockSystem(np.eye(len(other)), np.zeros(len(other)), other, "three-curve")
    with pytest.raises(StateError):
        PreconditionedSolver(system, R)


def test_dense_and_apply_agree():
    _, mesh, ctx = setup(n_pan=6)
    R = compute_R(mesh, ctx, 3)
    x = np.random.default_rng(0).standard_normal(len(mesh)) + 0j
    np.testing.assert_allclose(R.dense() @ x, R.apply(x), atol=1e-13)
