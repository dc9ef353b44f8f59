"""Recursively compressed inverse preconditioning at the two corners.

Near each corner ``x_A``, ``x_B`` the operator on gamma and the arc is split
into a *star* part (source and target both on the two coarse panels per side
next to the same corner) and a *circ* remainder.  The compressed weighted
inverse

    R = P_W^T (I + K*_fin)^(-1) P

is built by a level-by-level recursion over dyadically refined local meshes,
so the fine mesh never has to be assembled globally.  The coarse system is
then ``(I + A_circ R~) Phi~ = G`` with ``R~ = diag(R, I)`` and the physical
(coarse, quadrature-compatible) density ``Phi = R~ Phi~``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError, StateError
from .geometry import NODES_PER_PANEL, Curve, Panel, PanelMesh, coarse_panel_length, panel_mesh
from .kernels import WaveContext
from .nystrom import BlockSystem, DensitySolution, assemble_A, lagrange_matrix

__all__ = [
    "CORNERS",
    "ProlongationPair",
    "CompressedInverse",
    "PreconditionedSolver",
    "prolongation",
    "kernel_split",
    "star_mesh",
    "compute_R",
    "direct_R",
    "solve_preconditioned",
    "reconstruct_fine_density",
]

log = logging.getLogger(__name__)

CORNERS = ("A", "B")
ARMS = ("gamma", "arc")


@dataclass
class ProlongationPair:
    """Panel-wise interpolation ``P`` (coarse -> fine) and ``P_W = W_fin P W_coa^-1``.

    Weights are parameter weights, so ``P_W^T P = I`` exactly.
    """

    P: np.ndarray
    PW: np.ndarray

    @property
    def PWT(self) -> np.ndarray:
        return self.PW.T


def prolongation(coarse: PanelMesh, fine: PanelMesh) -> ProlongationPair:
    n = NODES_PER_PANEL
    P = np.zeros((len(fine), len(coarse)))
    for i, pf in enumerate(fine.panels):
        for j, pc in enumerate(coarse.panels):
            if pc.contains(pf):
                break
        else:
            raise ValueError(f"fine panel {pf} is not inside any coarse panel")
        tau = pc.local(pf.native(fine.gl_nodes))
        P[i * n:(i + 1) * n, j * n:(j + 1) * n] = lagrange_matrix(tau)
    PW = fine.param_weights[:, None] * P / coarse.param_weights[None, :]
    return ProlongationPair(P, PW)


def _arm_panels(curve: str, anchor: str, edges) -> list[Panel]:
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        out.append(Panel(curve, anchor, lo, hi) if anchor == "A" else Panel(curve, anchor, hi, lo))
    return out


def star_mesh(curves: dict[str, Curve], corner: str, edges: dict[str, list[float]]) -> PanelMesh:
    """Local mesh on both arms of a corner with the given native panel edges per arm."""
    panels = []
    for arm in ARMS:
        panels += _arm_panels(arm, corner, edges[arm])
    return panel_mesh({a: curves[a] for a in ARMS}, panels, level="local")


def _inner_nodes(mesh: PanelMesh, limit: dict[str, float]) -> np.ndarray:
    idx = [
        mesh.panel_nodes(i)
        for i, p in enumerate(mesh.panels)
        if max(p.c0, p.c1) <= limit[p.curve]
    ]
    return np.concatenate(idx)


@dataclass
class _Level:
    mesh: PanelMesh
    lu: tuple
    mat_inner: np.ndarray
    P: np.ndarray
    inner: np.ndarray
    outer: np.ndarray


@dataclass
class CompressedInverse:
    """Per-corner blocks of ``R`` on the coarse mesh (identity elsewhere).

    ``blocks[c] = (node indices in the coarse mesh, R_c)``; ``levels[c]`` holds
    the recursion artifacts needed for fine-density reconstruction, ordered
    from level 1 (innermost) to ``n_sub``.
    """

    blocks: dict[str, tuple[np.ndarray, np.ndarray]]
    n_sub: int
    mesh: PanelMesh
    levels: dict[str, list[_Level]] = field(default_factory=dict)
    R0: dict[str, np.ndarray] = field(default_factory=dict)
    base: dict[str, PanelMesh] = field(default_factory=dict)

    def dense(self) -> np.ndarray:
        """Full ``diag(R, I)`` on all coarse nodes."""
        N = len(self.mesh)
        out = np.eye(N, dtype=complex)
        for idx, R in self.blocks.values():
            out[np.ix_(idx, idx)] = R
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=complex, copy=True)
        for idx, R in self.blocks.values():
            y[idx] = R @ x[idx]
        return y


def kernel_split(A: np.ndarray, mesh: PanelMesh) -> tuple[np.ndarray, np.ndarray]:
    """``(A_star, A_circ)`` with ``A_star`` nonzero only inside the corner blocks."""
    star = np.zeros_like(A)
    for c in CORNERS:
        idx = mesh.corner_star_nodes(c)
        star[np.ix_(idx, idx)] = A[np.ix_(idx, idx)]
    return star, A - star


def _corner_lengths(mesh: PanelMesh) -> dict[str, float]:
    return {a: coarse_panel_length(mesh.curves[a], mesh.n_pan) for a in ARMS}


def _check_star_alignment(mesh: PanelMesh, corner: str, top: PanelMesh) -> np.ndarray:
    idx = mesh.corner_star_nodes(corner)
    if len(idx) != len(top) or not np.allclose(mesh.rel[idx], top.rel, rtol=0, atol=1e-15):
        raise StateError("coarse corner panels do not match the recursion's top-level mesh")
    return idx


def _solve_lu(lu, rhs, level, corner):
    out = sla.lu_solve(lu, rhs)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite local solve at corner {corner}, level {level}")
    return out


def _inverse(M, what):
    try:
        out = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular local system ({what})") from exc
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite local inverse ({what})")
    return out


def compute_R(mesh: PanelMesh, ctx: WaveContext, n_sub: int, keep_artifacts: bool = True) -> CompressedInverse:
    """Compressed inverse for both corners by recursion over ``n_sub`` levels."""
    if n_sub < 0:
        raise ValueError("n_sub must be non-negative")
    H = _corner_lengths(mesh)
    blocks, levels, R0s, bases = {}, {}, {}, {}
    for c in CORNERS:
        top = star_mesh(mesh.curves, c, {a: [0.0, H[a], 2.0 * H[a]] for a in ARMS})
        idx = _check_star_alignment(mesh, c, top)
        if n_sub == 0:
            R = _inverse(np.eye(len(top)) + assemble_A(top, ctx), f"corner {c}, level 0")
            blocks[c] = (idx, R)
            levels[c] = []
            R0s[c] = R
            bases[c] = top
            continue
        R = None
        lv = []
        for i in range(1, n_sub + 1):
            s = {a: H[a] * 2.0 ** (i - n_sub) for a in ARMS}
            bmesh = star_mesh(mesh.curves, c, {a: [0.0, 0.5 * s[a], s[a], 2.0 * s[a]] for a in ARMS})
            cmesh = star_mesh(mesh.curves, c, {a: [0.0, s[a], 2.0 * s[a]] for a in ARMS})
            inner = _inner_nodes(bmesh, s)
            outer = np.setdiff1d(np.arange(len(bmesh)), inner)
            MAT = np.eye(len(bmesh), dtype=complex) + assemble_A(bmesh, ctx)
            if R is None:
                R = _inverse(MAT[np.ix_(inner, inner)], f"corner {c}, level 1 start")
                R0s[c] = R
                bases[c] = bmesh
            mat_inner = _inverse(R, f"corner {c}, level {i}")
            MAT[np.ix_(inner, inner)] = mat_inner
            pp = prolongation(cmesh, bmesh)
            try:
                lu = sla.lu_factor(MAT, check_finite=True)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise NumericalError(f"local factorisation failed at corner {c}, level {i}") from exc
            R = pp.PWT @ _solve_lu(lu, pp.P.astype(complex), i, c)
            if keep_artifacts:
                lv.append(_Level(bmesh, lu, mat_inner, pp.P, inner, outer))
        blocks[c] = (idx, R)
        levels[c] = lv
    return CompressedInverse(blocks, n_sub, mesh, levels if keep_artifacts else {}, R0s, bases)


def direct_R(mesh: PanelMesh, ctx: WaveContext, n_sub: int) -> dict[str, np.ndarray]:
    """``P_W^T (I + K*_fin)^-1 P`` per corner from the fully refined local mesh (oracle)."""
    H = _corner_lengths(mesh)
    out = {}
    for c in CORNERS:
        top = star_mesh(mesh.curves, c, {a: [0.0, H[a], 2.0 * H[a]] for a in ARMS})
        edges = {a: [0.0] + [H[a] / 2.0**m for m in range(n_sub, -1, -1)] + [2.0 * H[a]] for a in ARMS}
        fine = star_mesh(mesh.curves, c, edges)
        pp = prolongation(top, fine)
        K = np.eye(len(fine)) + assemble_A(fine, ctx)
        out[c] = pp.PWT @ np.linalg.solve(K, pp.P.astype(complex))
    return out


class PreconditionedSolver:
    """LU factorisation of ``I + A_circ diag(R, I)`` for repeated right-hand sides."""

    def __init__(self, system: BlockSystem, R: CompressedInverse):
        if len(system.mesh) != len(R.mesh):
            raise StateError("system and compressed inverse live on different meshes")
        self.system = system
        self.R = R
        N = len(system.mesh)
        A = system.matrix - np.eye(N)
        _, circ = kernel_split(A, system.mesh)
        M = np.array(circ, dtype=complex)
        for idx, Rc in R.blocks.values():
            M[:, idx] = circ[:, idx] @ Rc
        M += np.eye(N)
        try:
            self.lu = sla.lu_factor(M, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise NumericalError("factorisation of the compressed system failed") from exc
        gecon = sla.get_lapack_funcs("gecon", (self.lu[0],))
        rcond, info = gecon(self.lu[0], np.linalg.norm(M, 1), norm="1")
        # reciprocal 1-norm condition estimate; tiny values flag a near-resonant system
        self.rcond = float(rcond) if info == 0 else 0.0

    def solve(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(Phi~, Phi)`` for one or several right-hand sides (columns)."""
        tilde = sla.lu_solve(self.lu, np.asarray(G, dtype=complex))
        if not np.all(np.isfinite(tilde)):
            raise NumericalError("compressed solve produced non-finite values")
        phys = self.R.apply(tilde)
        return tilde, phys


def solve_preconditioned(system: BlockSystem, R: CompressedInverse) -> tuple[np.ndarray, np.ndarray]:
    return PreconditionedSolver(system, R).solve(system.rhs)


def _panel_key(p: Panel) -> tuple:
    return (p.curve, p.anchor, min(p.c0, p.c1), max(p.c0, p.c1))


def reconstruct_fine_density(tilde: np.ndarray, R: CompressedInverse, fine: PanelMesh) -> DensitySolution:
    """Unroll the recursion to recover density values on the refined corner panels.

    ``fine`` must be ``refine_corner_mesh(R.mesh, R.n_sub)``.  Away from the
    corners fine values equal the coarse ``Phi~`` (where ``R`` is the identity).
    """
    coarse = R.mesh
    tilde = np.asarray(tilde, dtype=complex)
    trailing = tilde.shape[1:]
    values: dict[tuple, np.ndarray] = {}
    n = NODES_PER_PANEL
    for c in CORNERS:
        idx, Rc = R.blocks[c]
        r = tilde[idx]
        if R.n_sub == 0:
            y = Rc @ r
            top = R.base[c]
            for j, p in enumerate(top.panels):
                values[_panel_key(p)] = y[j * n:(j + 1) * n]
            continue
        lv = R.levels.get(c)
        if not lv:
            raise StateError("recursion artifacts were not retained; call compute_R(keep_artifacts=True)")
        for level in reversed(lv):
            y = sla.lu_solve(level.lu, level.P @ r)
            for j, p in enumerate(level.mesh.panels):
                nodes = level.mesh.panel_nodes(j)
                if nodes[0] in level.outer:
                    values[_panel_key(p)] = y[nodes]
            r = level.mat_inner @ y[level.inner]
        y0 = R.R0[c] @ r
        base = R.base[c]
        inner_panels = [j for j in range(len(base.panels)) if base.panel_nodes(j)[0] in lv[0].inner]
        for m, j in enumerate(inner_panels):
            values[_panel_key(base.panels[j])] = y0[m * n:(m + 1) * n]

    out = np.zeros((len(fine),) + trailing, dtype=complex)
    star_panels = {c: set(coarse.corner_star_panels(c)) for c in CORNERS}
    for j, p in enumerate(fine.panels):
        nodes = fine.panel_nodes(j)
        in_star = any(p.parent in s for s in star_panels.values())
        if in_star:
            key = _panel_key(p)
            if key not in values:
                raise StateError(f"no reconstructed values for fine panel {p}")
            out[nodes] = values[key]
        else:
            out[nodes] = tilde[coarse.panel_nodes(p.parent)]
    return DensitySolution(out, fine, level="fine")
