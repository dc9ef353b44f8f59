"""End-to-end forward solves, closed-form checks and convergence studies."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .geometry import SurfaceProfile, build_coarse_mesh, build_curves, refine_corner_mesh
from .kernels import WaveContext, single_layer_parts
from .nystrom import (
    DensitySolution,
    FarFieldSamples,
    assemble_A,
    assemble_G_planewave,
    assemble_G_pointsource,
    BlockSystem,
    farfield_matrix,
    field_at_points,
    layer_matrix,
    restriction_matrix,
    upper_directions,
)
from .rcip import PreconditionedSolver, compute_R, reconstruct_fine_density

__all__ = [
    "PlaneWave",
    "PointSource",
    "ForwardConfig",
    "ForwardSolver",
    "solve_forward",
    "exact_pointsource_farfield",
    "check_mixed_reciprocity",
    "convergence_study",
    "synthesis_panels",
    "inversion_panels",
    "theta_from_direction",
]

log = logging.getLogger(__name__)

VARIANTS = ("three-curve", "two-curve")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def synthesis_panels(k: float) -> int:
    """Panels per curve for data synthesis: nearest integer to ``0.6 k + 18``."""
    return _round_half_up(0.6 * k + 18.0)


def inversion_panels(k: float) -> int:
    """Panels per curve inside the inversion loop: nearest integer to ``0.5 k + 14``."""
    return _round_half_up(0.5 * k + 14.0)


def theta_from_direction(d: Sequence[float]) -> float:
    """Incidence angle ``theta`` with ``d = (sin theta, -cos theta)``."""
    d = np.asarray(d, dtype=float)
    if abs(np.hypot(*d) - 1.0) > 1e-12 or d[1] >= 0:
        raise ConfigurationError(f"incident direction must be a unit vector pointing down, got {d.tolist()}")
    return float(math.atan2(d[0], -d[1]))


@dataclass(frozen=True)
class PlaneWave:
    """``exp(i k d.x)`` with ``d = (sin theta, -cos theta)``."""

    theta: float
    amplitude: complex = 1.0

    def __post_init__(self):
        if not abs(self.theta) < 0.5 * math.pi:
            raise ConfigurationError(f"theta must lie in (-pi/2, pi/2), got {self.theta!r}")

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.sin(self.theta), -math.cos(self.theta)])

    def describe(self) -> dict:
        return {"type": "plane", "theta": self.theta}


@dataclass(frozen=True)
class PointSource:
    """``Phi_k(x, y)`` with its mirror image ``Phi_k(x, y_re)`` as reflected field."""

    y: tuple[float, float]

    def describe(self) -> dict:
        return {"type": "point", "y": list(self.y)}


@dataclass(frozen=True)
class ForwardConfig:
    profile: SurfaceProfile
    k: float
    incidence: PlaneWave | PointSource = PlaneWave(0.0)
    R: float = 1.0
    aux_center: tuple[float, float] = (0.0, -0.5)
    aux_radius: float = 0.1
    rho_imp: float = 1.0
    aux_rule: str = "first-zero"
    n_pan: int | None = None
    n_sub: int = 30
    variant: str = "three-curve"
    directions: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (isinstance(self.k, (int, float)) and self.k > 0 and math.isfinite(self.k)):
            raise ConfigurationError(f"k must be positive, got {self.k!r}")
        if self.n_pan is None:
            object.__setattr__(self, "n_pan", synthesis_panels(self.k))
        if isinstance(self.n_pan, bool) or int(self.n_pan) != self.n_pan or self.n_pan < 4:
            raise ConfigurationError(f"n_pan must be an integer >= 4, got {self.n_pan!r}")
        if isinstance(self.n_sub, bool) or int(self.n_sub) != self.n_sub or self.n_sub < 0:
            raise ConfigurationError(f"n_sub must be a non-negative integer, got {self.n_sub!r}")
        if self.variant == "three-curve":
            WaveContext(self.k, self.rho_imp, self.aux_radius, self.aux_rule)  # validates k * r_aux
        if self.directions is None:
            object.__setattr__(self, "directions", upper_directions(200))
        else:
            dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
            object.__setattr__(self, "directions", dirs)

    def context(self) -> WaveContext:
        return WaveContext(self.k, self.rho_imp, self.aux_radius if self.variant == "three-curve" else None,
                           self.aux_rule)


class ForwardSolver:
    """Assembled and factorised forward problem for one geometry and wavenumber.

    The factorisation is reused across right-hand sides (incident fields,
    Frechet-derivative data).
    """

    def __init__(
        self,
        profile: SurfaceProfile,
        k: float,
        *,
        n_pan: int,
        n_sub: int = 30,
        variant: str = "three-curve",
        R: float | None = None,
        aux_center: Sequence[float] = (0.0, -0.5),
        aux_radius: float = 0.1,
        rho_imp: float = 1.0,
        aux_rule: str = "first-zero",
    ):
        if variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
        t0 = time.perf_counter()
        self.profile = profile
        self.variant = variant
        self.n_sub = int(n_sub)
        self.curves = build_curves(profile, R, aux_center, aux_radius)
        labels = ("gamma", "arc", "aux") if variant == "three-curve" else ("gamma", "arc")
        self.ctx = WaveContext(k, rho_imp, aux_radius if variant == "three-curve" else None, aux_rule)
        self.mesh = build_coarse_mesh(self.curves, n_pan, labels)
        A = assemble_A(self.mesh, self.ctx)
        self.system = BlockSystem(np.eye(len(self.mesh)) + A, np.zeros(len(self.mesh), complex), self.mesh, variant)
        self.R = compute_R(self.mesh, self.ctx, self.n_sub)
        self.engine = PreconditionedSolver(self.system, self.R)
        self.gamma_nodes = self.mesh.curve_nodes("gamma")
        self.setup_time = time.perf_counter() - t0
        log.debug("forward setup k=%g n_pan=%d variant=%s: %.2fs", k, n_pan, variant, self.setup_time)

    @classmethod
    def from_config(cls, cfg: ForwardConfig) -> "ForwardSolver":
        return cls(
            cfg.profile, cfg.k, n_pan=cfg.n_pan, n_sub=cfg.n_sub, variant=cfg.variant,
            R=cfg.R, aux_center=cfg.aux_center, aux_radius=cfg.aux_radius, rho_imp=cfg.rho_imp,
            aux_rule=cfg.aux_rule,
        )

    @property
    def k(self) -> float:
        return self.ctx.k

    # -- right-hand sides --------------------------------------------------
    def rhs(self, incidence: PlaneWave | PointSource) -> np.ndarray:
        if isinstance(incidence, PlaneWave):
            return assemble_G_planewave(self.mesh, self.ctx, incidence.theta, incidence.amplitude)
        return assemble_G_pointsource(self.mesh, self.ctx, incidence.y)

    def solve(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(Phi~, Phi)`` on the coarse mesh."""
        return self.engine.solve(G)

    def density(self, incidence) -> DensitySolution:
        _, phys = self.solve(self.rhs(incidence))
        return DensitySolution(phys, self.mesh)

    # -- outputs -------------------------------------------------------------
    def farfield_operator(self, directions) -> np.ndarray:
        return farfield_matrix(self.mesh, self.ctx, directions)

    def far_field(self, phys: np.ndarray, directions) -> np.ndarray:
        return self.farfield_operator(directions) @ phys

    @cached_property
    def fine_mesh(self):
        return refine_corner_mesh(self.mesh, self.n_sub)

    @cached_property
    def _boundary_operator(self) -> tuple[np.ndarray, np.ndarray]:
        fine = self.fine_mesh
        Q = restriction_matrix(self.mesh, fine, "gamma")
        used = np.flatnonzero(np.abs(Q).sum(axis=0) > 0)
        rows = fine.curve_nodes("gamma")[used]
        S = layer_matrix(fine, self.ctx, "S", rows=rows)
        return Q[:, used] @ S, rows

    def scattered_on_gamma(self, tilde: np.ndarray) -> np.ndarray:
        """``u^s`` at the coarse gamma nodes from ``Phi~`` (via the fine density)."""
        fine = reconstruct_fine_density(tilde, self.R, self.fine_mesh)
        E, _ = self._boundary_operator
        return E @ fine.values

    def incident_on_gamma(self, incidence) -> np.ndarray:
        """``u^i + u^r`` at the coarse gamma nodes."""
        x = self.mesh.pos[self.gamma_nodes]
        k = self.k
        if isinstance(incidence, PlaneWave):
            s, c = math.sin(incidence.theta), math.cos(incidence.theta)
            return incidence.amplitude * (
                np.exp(1j * k * (x[:, 0] * s - x[:, 1] * c)) + np.exp(1j * k * (x[:, 0] * s + x[:, 1] * c))
            )
        y = np.asarray(incidence.y, dtype=float)
        out = 0
        for src in (y, y * [1.0, -1.0]):
            r = np.hypot(*(x - src).T)
            out = out + single_layer_parts(r, k)[0]
        return out

    def field_at(self, phys: np.ndarray, points) -> np.ndarray:
        return field_at_points(DensitySolution(phys, self.mesh), self.ctx, points)


def solve_forward(cfg: ForwardConfig) -> tuple[DensitySolution, FarFieldSamples]:
    """Mesh, assembly, compression, compressed solve and far field for one config."""
    solver = ForwardSolver.from_config(cfg)
    _, phys = solver.solve(solver.rhs(cfg.incidence))
    vals = solver.far_field(phys, cfg.directions)
    ff = FarFieldSamples(cfg.directions, vals, cfg.k, cfg.incidence.describe())
    return DensitySolution(phys, solver.mesh), ff


def exact_pointsource_farfield(y, k: float, directions) -> FarFieldSamples:
    """``-gamma (exp(-i k xhat.y) + exp(-i k xhat.y_re))``.

    This is the far field of the scattered field only when ``y`` and its
    mirror image both lie below the surface.
    """
    y = np.asarray(y, dtype=float)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    g = WaveContext(k).farfield_constant
    vals = -g * (np.exp(-1j * k * dirs @ y) + np.exp(-1j * k * dirs @ (y * [1.0, -1.0])))
    return FarFieldSamples(dirs, vals, k, {"type": "point", "y": y.tolist()})


def check_mixed_reciprocity(cfg: ForwardConfig, y, d, solver: ForwardSolver | None = None) -> float:
    """Relative discrepancy of ``u_inf(d; y) = gamma u(y; -d)``.

    The left side is the far field, in direction ``d``, of the total field
    excited by a point source at ``y`` (source, mirror image and scattered
    part).  The right side is the total plane-wave field with incident
    direction ``-d`` evaluated at ``y``.
    """
    y = np.asarray(y, dtype=float)
    d = np.asarray(d, dtype=float)
    if abs(np.hypot(*d) - 1.0) > 1e-12 or d[1] <= 0:
        raise ConfigurationError("d must be a unit vector in the upper half plane")
    solver = solver or ForwardSolver.from_config(cfg)
    k = solver.k
    g = solver.ctx.farfield_constant

    _, phys_p = solver.solve(solver.rhs(PointSource(tuple(y))))
    lhs = solver.far_field(phys_p, d[None, :])[0]
    lhs += g * (np.exp(-1j * k * d @ y) + np.exp(-1j * k * d @ (y * [1.0, -1.0])))

    pw = PlaneWave(theta_from_direction(-d))
    _, phys_w = solver.solve(solver.rhs(pw))
    s, c = math.sin(pw.theta), math.cos(pw.theta)
    u_inc = np.exp(1j * k * (y[0] * s - y[1] * c)) + np.exp(1j * k * (y[0] * s + y[1] * c))
    u = u_inc + solver.field_at(phys_w, y[None, :])[0]
    rhs = g * u
    return float(abs(lhs - rhs) / abs(rhs))


def convergence_study(cfg: ForwardConfig, n_pans: Sequence[int]) -> list[tuple[int, float]]:
    """``(n_pan, max relative far-field error)`` against the point-source closed form."""
    if not isinstance(cfg.incidence, PointSource):
        raise ConfigurationError("convergence study needs point-source incidence")
    exact = exact_pointsource_farfield(cfg.incidence.y, cfg.k, cfg.directions).values
    rows = []
    for n in n_pans:
        _, ff = solve_forward(replace(cfg, n_pan=int(n)))
        err = float(np.max(np.abs(ff.values - exact) / np.abs(exact)))
        log.info("n_pan=%d relative error %.3e", n, err)
        rows.append((int(n), err))
    return rows
