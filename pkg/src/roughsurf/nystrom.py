"""Nystrom discretisation of the boundary integral system.

The scattered field is a single layer over gamma, the lower arc and
(optionally) the auxiliary circle.  Collocating the Neumann condition on
gamma, a reflected-kernel condition on the arc and an impedance condition on
the auxiliary circle gives ``(I + A) Phi = G`` with

    row gamma:  -2 K'
    row arc:    -2 (K' - K're)
    row aux:    -2 (K' + i rho S)

Unknowns are density values at the nodes.  Integrals are
``sum_j kernel(x_i, y_j) w_j phi_j`` plus product-integration corrections for
the logarithmic part on the self panel and its neighbours on the same curve.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import NODES_PER_PANEL, GeometryError, PanelMesh
from .kernels import (
    WaveContext,
    kprime_diagonal,
    kprime_parts,
    log_weights,
    single_layer_diagonal,
    single_layer_parts,
)
from .specfun import gauss_legendre

__all__ = [
    "BlockSystem",
    "DensitySolution",
    "FarFieldSamples",
    "assemble_A",
    "assemble_system",
    "assemble_G_planewave",
    "assemble_G_pointsource",
    "layer_matrix",
    "farfield_matrix",
    "far_field",
    "eval_field_on_gammaR",
    "restriction_matrix",
    "tangential_derivatives",
    "lagrange_matrix",
    "differentiation_matrix",
    "upper_directions",
    "field_at_points",
]

log = logging.getLogger(__name__)

_ANCHOR_CODE = {"A": 0, "B": 1, "C": 2}


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------
@dataclass
class BlockSystem:
    """``(I + A) Phi = G`` on one mesh; ``variant`` is ``three-curve`` or ``two-curve``."""

    matrix: np.ndarray
    rhs: np.ndarray
    mesh: PanelMesh
    variant: str


@dataclass
class DensitySolution:
    values: np.ndarray
    mesh: PanelMesh
    level: str = "coarse"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape[0] != len(self.mesh):
            raise ValueError("density length does not match the mesh")

    def on(self, label: str) -> np.ndarray:
        return self.values[self.mesh.curve_nodes(label)]

    def to_csv(self, path) -> None:
        param = self.mesh.param()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["curve", "param", "x1", "x2", "re", "im"])
            for i in range(len(self.mesh)):
                w.writerow([
                    self.mesh.curve_of_node[i],
                    format(float(param[i]), ".17g"),
                    format(float(self.mesh.pos[i, 0]), ".17g"),
                    format(float(self.mesh.pos[i, 1]), ".17g"),
                    format(float(self.values[..., i].real), ".17g") if self.values.ndim == 1 else "",
                    format(float(self.values[..., i].imag), ".17g") if self.values.ndim == 1 else "",
                ])


@dataclass
class FarFieldSamples:
    """Far-field values at unit directions on the upper half circle."""

    directions: np.ndarray
    values: np.ndarray
    k: float
    incident: dict = field(default_factory=dict)

    def __post_init__(self):
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        self.values = np.asarray(self.values, dtype=complex)
        norms = np.hypot(self.directions[:, 0], self.directions[:, 1])
        if np.any(np.abs(norms - 1.0) > 1e-12) or np.any(self.directions[:, 1] <= 0):
            raise ValueError("observation directions must be unit vectors with positive second component")

    @property
    def angles(self) -> np.ndarray:
        return np.arctan2(self.directions[:, 1], self.directions[:, 0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["angle", "re", "im"])
            for a, v in zip(self.angles, self.values):
                w.writerow([format(float(a), ".17g"), format(float(v.real), ".17g"), format(float(v.imag), ".17g")])


def upper_directions(n: int) -> np.ndarray:
    """``n`` equidistant unit vectors at angles ``(j - 1/2) pi / n``, j = 1..n."""
    if n < 1:
        raise ValueError("need at least one direction")
    phi = (np.arange(1, n + 1) - 0.5) * np.pi / n
    return np.column_stack([np.cos(phi), np.sin(phi)])


# ---------------------------------------------------------------------------
# interpolation on a panel
# ---------------------------------------------------------------------------
@lru_cache(maxsize=4)
def _barycentric(n: int) -> tuple[np.ndarray, np.ndarray]:
    t = gauss_legendre(n).nodes
    w = np.array([1.0 / np.prod(t[j] - np.delete(t, j)) for j in range(n)])
    return t, w


def lagrange_matrix(x, n: int = NODES_PER_PANEL) -> np.ndarray:
    """Rows evaluate the degree ``n-1`` interpolant through the GL nodes at ``x``."""
    t, w = _barycentric(n)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - t[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    terms = w / diff
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    L[rows] = exact[rows].astype(float)
    return L


@lru_cache(maxsize=4)
def differentiation_matrix(n: int = NODES_PER_PANEL) -> np.ndarray:
    """``D[i, j] = l_j'(t_i)`` for the Lagrange basis on the GL nodes."""
    t, w = _barycentric(n)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = (w[j] / w[i]) / (t[i] - t[j])
        D[i, i] = -D[i].sum()
    D.flags.writeable = False
    return D


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------
def _codes(mesh: PanelMesh) -> np.ndarray:
    return np.array([_ANCHOR_CODE.get(a, 3) for a in mesh.anchor_of_node])


def _differences(t_rel, t_pos, t_code, s_rel, s_pos, s_code) -> np.ndarray:
    """Pairwise ``x - y``, using anchor-relative coordinates when anchors agree."""
    same = (t_code[:, None] == s_code[None, :])[..., None]
    rel = t_rel[:, None, :] - s_rel[None, :, :]
    glob = t_pos[:, None, :] - s_pos[None, :, :]
    return np.where(same, rel, glob)


def _panel_param_bounds(mesh: PanelMesh, i: int) -> tuple[float, float]:
    p = mesh.panels[i]
    c = mesh.curves[p.curve]
    a, b = c.to_param(p.c0, p.anchor), c.to_param(p.c1, p.anchor)
    return (a, b) if a <= b else (b, a)


def _adjacent(mesh: PanelMesh, a: int, b: int) -> bool:
    pa, pb = mesh.panels[a], mesh.panels[b]
    if pa.curve != pb.curve:
        return False
    if a == b:
        return True
    if pa.anchor == pb.anchor and pa.anchor in ("A", "B"):
        return bool({pa.c0, pa.c1} & {pb.c0, pb.c1})
    a0, a1 = _panel_param_bounds(mesh, a)
    b0, b1 = _panel_param_bounds(mesh, b)
    tol = 1e-12 * max(1.0, abs(a1), abs(b1))
    ends = [(a1, b0), (b1, a0)]
    if mesh.curves[pa.curve].closed:
        period = 2.0 * math.pi
        ends += [(a1 - period, b0), (b1 - period, a0)]
    return any(abs(x - y) <= tol for x, y in ends)


def _local_coordinate(mesh: PanelMesh, src: int, tgt: int) -> np.ndarray:
    """Local coordinates (w.r.t. panel ``src``) of the nodes of panel ``tgt``."""
    ps, pt = mesh.panels[src], mesh.panels[tgt]
    t = mesh.gl_nodes
    if ps.anchor == pt.anchor:
        native = pt.native(t)
        if mesh.curves[ps.curve].closed:
            mid = 0.5 * (ps.c0 + ps.c1)
            native = mid + np.remainder(native - mid + math.pi, 2.0 * math.pi) - math.pi
        return ps.local(native)
    curve = mesh.curves[ps.curve]
    pt_param = curve.to_param(pt.native(t), pt.anchor)
    p0, p1 = curve.to_param(ps.c0, ps.anchor), curve.to_param(ps.c1, ps.anchor)
    return (2.0 * pt_param - p0 - p1) / (p1 - p0)


def _near_pairs(mesh: PanelMesh) -> list[tuple[int, int, np.ndarray]]:
    """(target panel, source panel, local coords of targets in source) for self/adjacent pairs."""
    cached = getattr(mesh, "_near_pairs_cache", None)
    if cached is not None:
        return cached
    out = []
    by_curve: dict[str, list[int]] = {}
    for i, p in enumerate(mesh.panels):
        by_curve.setdefault(p.curve, []).append(i)
    for idx in by_curve.values():
        for a in idx:
            for b in idx:
                if _adjacent(mesh, a, b):
                    tau = mesh.gl_nodes.copy() if a == b else _local_coordinate(mesh, b, a)
                    out.append((a, b, tau))
    mesh._near_pairs_cache = out
    return out


# ---------------------------------------------------------------------------
# layer operators
# ---------------------------------------------------------------------------
def layer_matrix(
    mesh: PanelMesh,
    ctx: WaveContext,
    kernel: str,
    rows: np.ndarray | None = None,
    corrected: bool = True,
) -> np.ndarray:
    """Discrete single layer (``kernel="S"``) or normal-derivative kernel
    (``kernel="K"``, normal at the target) with targets at mesh nodes ``rows``.

    Entry ``(i, j)`` approximates the contribution of ``phi(y_j)`` to
    ``int kernel(x_i, y) phi(y) ds(y)``.
    """
    N = len(mesh)
    rows = np.arange(N) if rows is None else np.asarray(rows, dtype=int)
    code = _codes(mesh)
    D = _differences(mesh.rel[rows], mesh.pos[rows], code[rows], mesh.rel, mesh.pos, code)
    r = np.hypot(D[..., 0], D[..., 1])
    diag = r == 0.0
    r_safe = np.where(diag, 1.0, r)
    k = ctx.k
    if kernel == "S":
        val, _ = single_layer_parts(r_safe, k)
        val[diag] = single_layer_diagonal(k)
    elif kernel == "K":
        nu = mesh.normal[rows]
        p = np.einsum("ijc,ic->ij", D, nu)
        val, _ = kprime_parts(r_safe, p, k)
        ti, sj = np.nonzero(diag)
        val[ti, sj] = kprime_diagonal(mesh.normal[sj], mesh.d1[sj], mesh.d2[sj])
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    M = val * mesh.weights[None, :]
    if corrected:
        _apply_log_corrections(M, mesh, ctx, kernel, rows)
    return M


def _apply_log_corrections(M, mesh, ctx, kernel, rows) -> None:
    n = NODES_PER_PANEL
    row_pos = -np.ones(len(mesh), dtype=int)
    row_pos[rows] = np.arange(len(rows))
    glw = mesh.gl_weights
    t = mesh.gl_nodes
    code = _codes(mesh)
    k = ctx.k
    for a, b, tau in _near_pairs(mesh):
        I = mesh.panel_nodes(a)
        ri = row_pos[I]
        if np.any(ri < 0):
            continue
        J = mesh.panel_nodes(b)
        D = _differences(mesh.rel[I], mesh.pos[I], code[I], mesh.rel[J], mesh.pos[J], code[J])
        r = np.hypot(D[..., 0], D[..., 1])
        self_panel = a == b
        if self_panel:
            np.fill_diagonal(r, 1.0)
        if kernel == "S":
            _, L = single_layer_parts(r, k)
        else:
            p = np.einsum("ijc,ic->ij", D, mesh.normal[I])
            _, L = kprime_parts(r, p, k)
        W = np.stack([log_weights(x) for x in tau])  # (targets, sources)
        wj = mesh.weights[J]
        lt = np.abs(t[None, :] - tau[:, None])
        if self_panel:
            np.fill_diagonal(lt, 1.0)
        corr = L * wj[None, :] * (W / glw[None, :] - np.log(lt))
        if self_panel:
            d = np.arange(n)
            if kernel == "S":
                Ld = -1.0 / (2.0 * math.pi)
                half = mesh.panels[a].half
                corr[d, d] = Ld * wj * (np.log(half * mesh.speed[J]) + np.diag(W) / glw)
            else:
                corr[d, d] = 0.0
        M[np.ix_(ri, J)] += corr


def _reflected_kprime(mesh: PanelMesh, ctx: WaveContext, rows: np.ndarray) -> np.ndarray:
    """``K're`` with targets mirrored across ``x2 = 0`` (plain quadrature)."""
    flip = np.array([1.0, -1.0])
    code = _codes(mesh)
    D = _differences(mesh.rel[rows] * flip, mesh.pos[rows] * flip, code[rows], mesh.rel, mesh.pos, code)
    r = np.hypot(D[..., 0], D[..., 1])
    nu = mesh.normal[rows] * flip
    p = np.einsum("ijc,ic->ij", D, nu)
    val, _ = kprime_parts(r, p, ctx.k)
    return val * mesh.weights[None, :]


def assemble_A(mesh: PanelMesh, ctx: WaveContext) -> np.ndarray:
    """Dense operator ``A`` (without the identity) on all mesh nodes."""
    A = -2.0 * layer_matrix(mesh, ctx, "K")
    arc = mesh.curve_nodes("arc")
    if arc.size:
        A[arc] += 2.0 * _reflected_kprime(mesh, ctx, arc)
    aux = mesh.curve_nodes("aux")
    if aux.size:
        A[aux] -= 2j * ctx.rho_imp * layer_matrix(mesh, ctx, "S", rows=aux)
    return A


def assemble_system(mesh: PanelMesh, ctx: WaveContext, rhs: np.ndarray) -> BlockSystem:
    variant = "three-curve" if "aux" in mesh.labels else "two-curve"
    return BlockSystem(np.eye(len(mesh)) + assemble_A(mesh, ctx), np.asarray(rhs), mesh, variant)


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------
def assemble_G_planewave(mesh: PanelMesh, ctx: WaveContext, theta: float, amplitude: complex = 1.0) -> np.ndarray:
    """``2 d(u^i + u^r)/dnu`` on gamma for ``u^i = exp(i k d.x)``, ``d = (sin t, -cos t)``."""
    if not abs(theta) < 0.5 * math.pi:
        raise ValueError(f"incidence angle must lie in (-pi/2, pi/2), got {theta!r}")
    G = np.zeros(len(mesh), dtype=complex)
    idx = mesh.curve_nodes("gamma")
    x, nu = mesh.pos[idx], mesh.normal[idx]
    k = ctx.k
    s, c = math.sin(theta), math.cos(theta)
    ph_i = np.exp(1j * k * (x[:, 0] * s - x[:, 1] * c))
    ph_r = np.exp(1j * k * (x[:, 0] * s + x[:, 1] * c))
    dn_i = nu[:, 0] * s - nu[:, 1] * c
    dn_r = nu[:, 0] * s + nu[:, 1] * c
    G[idx] = 2j * k * amplitude * (dn_i * ph_i + dn_r * ph_r)
    return G


def _source_kprime(x, nu, y, k):
    d = x - np.asarray(y, dtype=float)
    r = np.hypot(d[:, 0], d[:, 1])
    p = np.einsum("ic,ic->i", d, nu)
    return kprime_parts(r, p, k)[0]


def assemble_G_pointsource(mesh: PanelMesh, ctx: WaveContext, y) -> np.ndarray:
    """``2 d(Phi(., y) + Phi(., y_re))/dnu`` on gamma.

    ``y`` may lie on either side of the surface but not on it.
    """
    y = np.asarray(y, dtype=float)
    gamma = mesh.curves["gamma"]
    h = float(gamma.profile(np.array([y[0]]))[0]) if abs(y[0]) < gamma.R else 0.0
    if y[1] == h:
        raise GeometryError("point source lies on the surface")
    G = np.zeros(len(mesh), dtype=complex)
    idx = mesh.curve_nodes("gamma")
    x, nu = mesh.pos[idx], mesh.normal[idx]
    G[idx] = 2.0 * (_source_kprime(x, nu, y, ctx.k) + _source_kprime(x, nu, y * [1.0, -1.0], ctx.k))
    return G


# ---------------------------------------------------------------------------
# far field and field evaluation
# ---------------------------------------------------------------------------
def farfield_matrix(mesh: PanelMesh, ctx: WaveContext, directions) -> np.ndarray:
    """``gamma_k w_j exp(-i k xhat . y_j)``; rows are directions."""
    xh = np.atleast_2d(np.asarray(directions, dtype=float))
    phase = np.exp(-1j * ctx.k * (xh @ mesh.pos.T))
    return ctx.farfield_constant * phase * mesh.weights[None, :]


def far_field(density: DensitySolution, ctx: WaveContext, directions, incident: dict | None = None) -> FarFieldSamples:
    vals = farfield_matrix(density.mesh, ctx, directions) @ density.values
    return FarFieldSamples(np.atleast_2d(directions), vals, ctx.k, dict(incident or {}))


def field_at_points(density: DensitySolution, ctx: WaveContext, points, min_distance: float | None = None) -> np.ndarray:
    """Single-layer field at points off the boundary (plain quadrature).

    A point closer to some panel than that panel's arc length (or than
    ``min_distance`` when given) is rejected.
    """
    mesh = density.mesh
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    D = pts[:, None, :] - mesh.pos[None, :, :]
    r = np.hypot(D[..., 0], D[..., 1])
    n_panels = len(mesh.panels)
    per_panel = r.reshape(len(pts), n_panels, NODES_PER_PANEL).min(axis=2)
    if min_distance is None:
        limit = mesh.weights.reshape(n_panels, NODES_PER_PANEL).sum(axis=1)
    else:
        limit = np.full(n_panels, float(min_distance))
    if np.any(per_panel < limit[None, :]):
        raise GeometryError("evaluation point closer than one panel length to the boundary")
    val, _ = single_layer_parts(r, ctx.k)
    return (val * mesh.weights[None, :]) @ density.values


def restriction_matrix(coarse: PanelMesh, fine: PanelMesh, label: str = "gamma") -> np.ndarray:
    """Panel-wise degree-15 interpolation from fine to coarse nodes on one curve."""
    cidx = coarse.curve_panels(label)
    fidx = fine.curve_panels(label)
    col_of = {f: j for j, f in enumerate(fidx)}
    n = NODES_PER_PANEL
    Q = np.zeros((len(cidx) * n, len(fidx) * n))
    for ci, c in enumerate(cidx):
        pc = coarse.panels[c]
        natives = pc.native(coarse.gl_nodes)
        children = [f for f in fidx if fine.panels[f].parent == c]
        for m, cn in enumerate(natives):
            for f in children:
                pf = fine.panels[f]
                lo, hi = sorted((pf.c0, pf.c1))
                if lo <= cn <= hi:
                    break
            else:
                raise ValueError("fine mesh does not cover the coarse node")
            j = col_of[f]
            Q[ci * n + m, j * n:(j + 1) * n] = lagrange_matrix(pf.local(cn))[0]
    return Q


def eval_field_on_gammaR(
    density_fine: DensitySolution,
    ctx: WaveContext,
    coarse: PanelMesh,
) -> np.ndarray:
    """Scattered field at the coarse gamma nodes from a fine-mesh density.

    The single layer is evaluated at fine gamma nodes (product integration on
    self/adjacent panels) and restricted panel-wise to the coarse nodes.
    """
    fine = density_fine.mesh
    Q = restriction_matrix(coarse, fine, "gamma")
    fidx = fine.curve_nodes("gamma")
    used = np.flatnonzero(np.abs(Q).sum(axis=0) > 0)
    rows = fidx[used]
    S = layer_matrix(fine, ctx, "S", rows=rows)
    vals = S @ density_fine.values
    return Q[:, used] @ vals


def tangential_derivatives(values: np.ndarray, mesh: PanelMesh, label: str = "gamma") -> tuple[np.ndarray, np.ndarray]:
    """``(du/ds, d^2u/ds^2)`` at the nodes of one curve from panel-wise interpolants.

    ``values`` may carry trailing dimensions (several fields at once).
    """
    D = differentiation_matrix()
    n = NODES_PER_PANEL
    pidx = mesh.curve_panels(label)
    values = np.asarray(values)
    if values.shape[0] != len(pidx) * n:
        raise ValueError("values must be given at all nodes of the curve")
    u = values.reshape((len(pidx), n) + values.shape[1:])
    ut = np.einsum("ij,pj...->pi...", D, u)
    utt = np.einsum("ij,pj...->pi...", D, ut)
    nodes = np.concatenate([mesh.panel_nodes(i) for i in pidx])
    half = np.repeat([mesh.panels[i].half for i in pidx], n)
    speed = mesh.speed[nodes]
    dot = np.einsum("ic,ic->i", mesh.d1[nodes], mesh.d2[nodes])
    extra = (slice(None),) + (None,) * (values.ndim - 1)
    hs = (half * speed)[extra]
    ut = ut.reshape(values.shape)
    utt = utt.reshape(values.shape)
    us = ut / hs
    uss = (utt - ut * (half * dot / speed**2)[extra]) / hs**2
    return us, uss
