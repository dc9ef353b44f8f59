"""Multi-frequency Newton-type reconstruction of the surface profile.

The unknown profile is ``h = sum_i a_i phi_{i,M}`` (quartic B-splines).  At
each wavenumber the far-field map is linearised around the current profile;
the derivative in direction ``dh`` is the far field of a Neumann problem with
boundary data

    f = d/ds[(nu2 dh) du/ds] + k^2 (nu2 dh) u

where ``u`` is the total field on the current surface.  Updates solve a
Tikhonov-regularised least-squares problem whose weight ``beta`` is fixed by
the discrepancy rule ``|J da + r|^2 = rho^2 |r|^2``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigurationError, GeometryError, NumericalError
from .forward import ForwardSolver, PlaneWave, inversion_panels, synthesis_panels, theta_from_direction
from .geometry import SurfaceProfile, spline_basis
from .nystrom import FarFieldSamples, tangential_derivatives, upper_directions

__all__ = [
    "MeasurementSet",
    "IterationRecord",
    "IterationState",
    "LMStep",
    "LinearizedModel",
    "farfield_operator",
    "frechet_rhs",
    "frechet_jacobian",
    "lm_step",
    "err_k",
    "reconstruct",
    "synthesize_measurements",
    "profile_errors",
]

log = logging.getLogger(__name__)


RCOND_FALLBACK = 1e-5


def _fmt(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------
@dataclass
class MeasurementSet:
    """Far-field data ``data[m, l, j]`` at wavenumber ``ks[m]``, incident
    direction ``incident[l]`` (pointing down) and observation ``directions[j]``."""

    ks: np.ndarray
    incident: np.ndarray
    directions: np.ndarray
    data: np.ndarray
    delta: float
    truth: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ks = np.asarray(self.ks, dtype=float)
        self.incident = np.atleast_2d(np.asarray(self.incident, dtype=float))
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        self.data = np.asarray(self.data, dtype=complex)
        if len(self.ks) < 1 or np.any(np.diff(self.ks) <= 0) or np.any(self.ks <= 0):
            raise ConfigurationError("wavenumbers must be positive and strictly increasing")
        if len(self.incident) < 1 or len(self.directions) < 1:
            raise ConfigurationError("need at least one incident and one observation direction")
        for d in self.incident:
            theta_from_direction(d)
        if np.any(np.abs(np.hypot(*self.directions.T) - 1) > 1e-12) or np.any(self.directions[:, 1] <= 0):
            raise ConfigurationError("observation directions must be unit vectors in the upper half plane")
        expected = (len(self.ks), len(self.incident), len(self.directions))
        if self.data.shape != expected:
            raise ConfigurationError(f"data shape {self.data.shape} does not match {expected}")
        if not self.delta >= 0:
            raise ConfigurationError("noise ratio must be non-negative")

    @property
    def thetas(self) -> list[float]:
        return [theta_from_direction(d) for d in self.incident]

    def save(self, directory) -> None:
        """``measurements.json`` (metadata) and ``measurements.csv`` (samples)."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        meta = {
            "ks": [float(k) for k in self.ks],
            "incident": self.incident.tolist(),
            "n_f": int(len(self.directions)),
            "delta": float(self.delta),
            "truth": self.truth,
            "meta": self.meta,
        }
        (out / "measurements.json").write_text(json.dumps(meta, indent=2))
        with open(out / "measurements.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "incident", "obs", "x1", "x2", "re", "im"])
            for m, k in enumerate(self.ks):
                for l in range(len(self.incident)):
                    for j, xh in enumerate(self.directions):
                        v = self.data[m, l, j]
                        w.writerow([_fmt(k), l, j, _fmt(xh[0]), _fmt(xh[1]), _fmt(v.real), _fmt(v.imag)])

    @classmethod
    def load(cls, directory) -> "MeasurementSet":
        src = Path(directory)
        meta_path, csv_path = src / "measurements.json", src / "measurements.csv"
        if not meta_path.is_file() or not csv_path.is_file():
            raise ConfigurationError(f"measurement files not found in {src}")
        meta = json.loads(meta_path.read_text())
        ks = np.array(meta["ks"], dtype=float)
        inc = np.array(meta["incident"], dtype=float)
        n_f = int(meta["n_f"])
        data = np.zeros((len(ks), len(inc), n_f), dtype=complex)
        dirs = np.zeros((n_f, 2))
        with open(csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                m = int(np.flatnonzero(ks == float(row["k"]))[0])
                l, j = int(row["incident"]), int(row["obs"])
                data[m, l, j] = complex(float(row["re"]), float(row["im"]))
                dirs[j] = float(row["x1"]), float(row["x2"])
        return cls(ks, inc, dirs, data, float(meta["delta"]), meta.get("truth"), meta.get("meta", {}))


def synthesize_measurements(
    profile: SurfaceProfile,
    ks: Sequence[float],
    incident: Sequence[Sequence[float]],
    n_f: int = 200,
    delta: float = 0.05,
    seed: int = 0,
    *,
    aux_center: Sequence[float] = (0.0, -0.5),
    aux_radius: float = 0.1,
    rho_imp: float = 1.0,
    n_sub: int = 30,
    panels: Callable[[float], int] = synthesis_panels,
    aux_rule: str = "first-zero",
) -> MeasurementSet:
    """Three-curve far fields with relative complex Gaussian noise ``delta`` per (k, d)."""
    dirs = upper_directions(n_f)
    inc = np.atleast_2d(np.asarray(incident, dtype=float))
    thetas = [theta_from_direction(d) for d in inc]
    ks = np.asarray(ks, dtype=float)
    rng = np.random.default_rng(seed)
    data = np.zeros((len(ks), len(inc), n_f), dtype=complex)
    for m, k in enumerate(ks):
        solver = ForwardSolver(profile, float(k), n_pan=panels(k), n_sub=n_sub, variant="three-curve",
                               aux_center=aux_center, aux_radius=aux_radius, rho_imp=rho_imp, aux_rule=aux_rule)
        G = np.column_stack([solver.rhs(PlaneWave(t)) for t in thetas])
        _, phys = solver.solve(G)
        clean = (solver.farfield_operator(dirs) @ phys).T
        for l in range(len(inc)):
            zeta = rng.standard_normal(n_f) + 1j * rng.standard_normal(n_f)
            u = clean[l]
            data[m, l] = u + delta * zeta * np.linalg.norm(u) / np.linalg.norm(zeta)
        log.info("synthesised k=%g (n_pan=%d)", k, solver.mesh.n_pan)
    meta = {"aux_center": list(aux_center), "aux_radius": aux_radius, "aux_rule": aux_rule, "seed": seed,
            "n_sub": n_sub}
    return MeasurementSet(ks, inc, dirs, data, delta, profile.to_dict(), meta)


# ---------------------------------------------------------------------------
# forward map and derivative
# ---------------------------------------------------------------------------
def _as_profile(coeffs, R: float = 1.0) -> SurfaceProfile:
    if isinstance(coeffs, SurfaceProfile):
        return coeffs
    return SurfaceProfile.spline(list(coeffs), R)


def frechet_rhs(
    u: np.ndarray,
    du_ds: np.ndarray,
    d2u_ds2: np.ndarray,
    dh: np.ndarray,
    dh_prime: np.ndarray,
    h_prime: np.ndarray,
    h_second: np.ndarray,
    k: float,
) -> np.ndarray:
    """``d/ds[(nu2 dh) du/ds] + k^2 (nu2 dh) u`` at gamma nodes.

    ``nu2 = 1/sqrt(1 + h'^2)``; the outer derivative is expanded with the
    analytic derivative of ``nu2 dh`` and the interpolated ``d^2u/ds^2``.
    Trailing axes of ``dh``/``dh_prime`` (several directions) broadcast
    against trailing axes of ``u``.
    """
    speed = np.sqrt(1.0 + h_prime**2)
    a = dh / speed
    a_s = (dh_prime / speed - dh * h_prime * h_second / speed**3) / speed
    return a_s * du_ds + a * d2u_ds2 + k * k * a * u


class LinearizedModel:
    """Far fields and their spline-coefficient Jacobian at one profile and wavenumber."""

    def __init__(
        self,
        profile: SurfaceProfile,
        k: float,
        thetas: Sequence[float],
        directions: np.ndarray,
        M: int,
        *,
        n_pan: int | None = None,
        n_sub: int = 30,
        variant: str = "two-curve",
        aux_center: Sequence[float] = (0.0, -0.5),
        aux_radius: float = 0.1,
    ):
        self.k = float(k)
        self.M = int(M)
        self.thetas = list(thetas)
        self.directions = np.atleast_2d(directions)
        n_pan = n_pan or inversion_panels(k)
        self.solver = ForwardSolver(profile, self.k, n_pan=n_pan, n_sub=n_sub,
                                    variant=variant, aux_center=aux_center, aux_radius=aux_radius)
        if variant == "two-curve" and self.solver.engine.rcond < RCOND_FALLBACK:
            # k^2 close to a Dirichlet eigenvalue of the region below the surface
            log.warning("two-curve system nearly singular at k=%g (rcond %.2e); using the auxiliary curve",
                        self.k, self.solver.engine.rcond)
            try:
                self.solver = ForwardSolver(profile, self.k, n_pan=n_pan, n_sub=n_sub, variant="three-curve",
                                            aux_center=aux_center, aux_radius=aux_radius, aux_rule="bessel-zeros")
            except (GeometryError, ConfigurationError) as exc:
                log.warning("auxiliary curve not admissible for the current profile (%s)", exc)
        self.incidences = [PlaneWave(t) for t in self.thetas]
        G = np.column_stack([self.solver.rhs(p) for p in self.incidences])
        self.tilde, self.phys = self.solver.solve(G)
        self.S_inf = self.solver.farfield_operator(self.directions)
        self.F = (self.S_inf @ self.phys).T  # (n_d, n_f)
        self._J = None

    def jacobian(self) -> np.ndarray:
        """``J[l, j, i]``: derivative of ``F_l(xhat_j)`` with respect to ``a_i``."""
        if self._J is not None:
            return self._J
        s = self.solver
        mesh = s.mesh
        x1 = mesh.pos[s.gamma_nodes, 0]
        hp = mesh.d1[s.gamma_nodes, 1]
        hpp = mesh.d2[s.gamma_nodes, 1]
        basis = spline_basis(self.M, s.curves[0].R)
        phi = np.column_stack([b(x1) for b in basis])
        dphi = np.column_stack([b(x1, 1) for b in basis])
        us = s.scattered_on_gamma(self.tilde)
        J = np.zeros((len(self.thetas), len(self.directions), self.M), dtype=complex)
        for l, inc in enumerate(self.incidences):
            u = s.incident_on_gamma(inc) + us[:, l]
            du, d2u = tangential_derivatives(u, mesh)
            f = frechet_rhs(u[:, None], du[:, None], d2u[:, None], phi, dphi, hp[:, None], hpp[:, None], self.k)
            G = np.zeros((len(mesh), self.M), dtype=complex)
            G[s.gamma_nodes] = -2.0 * f
            _, dphys = s.solve(G)
            J[l] = self.S_inf @ dphys
        self._J = J
        return J


def farfield_operator(coeffs, k: float, d, directions, **kw) -> FarFieldSamples:
    """``F_{d,k}[h]`` for a spline profile (two-curve solver by default)."""
    profile = _as_profile(coeffs, kw.pop("R", 1.0))
    theta = theta_from_direction(d)
    M = max(1, len(profile.coefficients))
    model = LinearizedModel(profile, k, [theta], directions, M, **kw)
    return FarFieldSamples(directions, model.F[0], k, {"type": "plane", "theta": theta})


def frechet_jacobian(coeffs, k: float, d, directions, M: int | None = None, **kw) -> np.ndarray:
    """``n_f x M`` derivative of ``F_{d,k}`` with respect to the spline coefficients."""
    profile = _as_profile(coeffs, kw.pop("R", 1.0))
    M = M or len(profile.coefficients)
    if not M:
        raise ConfigurationError("number of basis functions M is required for a closed-form profile")
    model = LinearizedModel(profile, k, [theta_from_direction(d)], directions, M, **kw)
    return model.jacobian()[0]


# ---------------------------------------------------------------------------
# Levenberg-Marquardt step
# ---------------------------------------------------------------------------
@dataclass
class LMStep:
    delta: np.ndarray
    beta: float
    flagged: bool
    model_residual: float
    target: float


def lm_step(J: np.ndarray, r: np.ndarray, rho_lm: float = 0.8, tol: float = 1e-3, max_steps: int = 60) -> LMStep:
    """Minimise ``|J da + r|^2 + beta |da|^2`` over real ``da`` with
    ``beta`` bisected (in log scale) until ``|J da + r|^2 = rho_lm^2 |r|^2``."""
    if not 0 < rho_lm < 1:
        raise ConfigurationError(f"rho_lm must lie in (0, 1), got {rho_lm!r}")
    J = np.asarray(J)
    r = np.asarray(r).reshape(-1)
    J = J.reshape(r.size, -1)
    Jr = np.vstack([J.real, J.imag]) if np.iscomplexobj(J) else J
    rr = np.concatenate([r.real, r.imag]) if np.iscomplexobj(r) else r
    M = Jr.shape[1]
    U, sig, Vt = np.linalg.svd(Jr, full_matrices=False)
    s = float(sig[0] ** 2) if sig.size and sig[0] > 0 else 1.0
    lo, hi = 1e-14 * s, 1e6 * s
    r2 = float(rr @ rr)
    if r2 == 0.0:
        return LMStep(np.zeros(M), hi, False, 0.0, 0.0)
    c = U.T @ rr
    outside = r2 - float(c @ c)
    target = rho_lm**2 * r2

    def model(beta):
        return float(np.sum((beta / (sig**2 + beta)) ** 2 * c**2)) + max(outside, 0.0)

    def step(beta):
        return -Vt.T @ (sig / (sig**2 + beta) * c)

    flagged = False
    if model(lo) > target:
        beta = lo
        flagged = True
        log.warning("discrepancy target unreachable; using beta at lower bracket edge")
    else:
        a, b = math.log(lo), math.log(hi)
        beta = math.exp(0.5 * (a + b))
        for _ in range(max_steps):
            beta = math.exp(0.5 * (a + b))
            m = model(beta)
            if abs(m / target - 1.0) <= tol:
                break
            if m > target:
                b = math.log(beta)
            else:
                a = math.log(beta)
        else:
            flagged = abs(model(beta) / target - 1.0) > tol
    return LMStep(step(beta), beta, flagged, model(beta), target)


def err_k(F: np.ndarray, data: np.ndarray) -> float:
    """Mean over incident directions of ``|F_l - data_l| / |data_l|``."""
    F = np.atleast_2d(F)
    data = np.atleast_2d(data)
    norms = np.linalg.norm(data, axis=1)
    if np.any(norms == 0):
        raise NumericalError("measurement with zero norm")
    return float(np.mean(np.linalg.norm(F - data, axis=1) / norms))


# ---------------------------------------------------------------------------
# reconstruction loop
# ---------------------------------------------------------------------------
@dataclass
class IterationRecord:
    k: float
    iteration: int
    err: float
    beta: float
    flagged: bool = False


@dataclass
class IterationState:
    coefficients: np.ndarray
    k_index: int = 0
    history: list[IterationRecord] = field(default_factory=list)
    stage_coefficients: dict[float, np.ndarray] = field(default_factory=dict)
    converged: dict[float, bool] = field(default_factory=dict)

    def profile(self, R: float = 1.0) -> SurfaceProfile:
        return SurfaceProfile.spline(self.coefficients, R)

    def write_trajectory(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "iteration", "err_k", "beta"])
            for rec in self.history:
                w.writerow([_fmt(rec.k), rec.iteration, _fmt(rec.err), _fmt(rec.beta)])


def reconstruct(
    measurements: MeasurementSet,
    M: int,
    rho_lm: float = 0.8,
    tau: float = 1.5,
    initial: Sequence[float] | None = None,
    max_iter_per_k: int = 20,
    *,
    R: float = 1.0,
    n_sub: int = 30,
    panels: Callable[[float], int] = inversion_panels,
    callback: Callable[[IterationState], None] | None = None,
) -> IterationState:
    """Frequency continuation: at each ``k`` take LM steps until ``Err_k < tau delta``
    or ``max_iter_per_k`` steps, then move on to the next ``k``."""
    if not tau > 1:
        raise ConfigurationError(f"tau must exceed 1, got {tau!r}")
    a = np.zeros(M) if initial is None else np.array(initial, dtype=float)
    if a.shape != (M,):
        raise ConfigurationError(f"initial guess must have {M} coefficients")
    thetas = measurements.thetas
    state = IterationState(a.copy())
    threshold = tau * measurements.delta
    for m, k in enumerate(measurements.ks):
        state.k_index = m
        data = measurements.data[m]
        it = 0
        model = LinearizedModel(SurfaceProfile.spline(a, R), k, thetas, measurements.directions, M,
                                n_pan=panels(k), n_sub=n_sub)
        while True:
            e = err_k(model.F, data)
            if e < threshold:
                state.history.append(IterationRecord(float(k), it, e, float("nan")))
                state.converged[float(k)] = True
                break
            if it >= max_iter_per_k:
                state.history.append(IterationRecord(float(k), it, e, float("nan")))
                state.converged[float(k)] = False
                log.warning("k=%g: Err_k=%.4g still above %.4g after %d iterations", k, e, threshold, it)
                break
            J = model.jacobian().reshape(-1, M)
            r = (model.F - data).reshape(-1)
            st = lm_step(J, r, rho_lm)
            state.history.append(IterationRecord(float(k), it, e, st.beta, st.flagged))
            log.info("k=%g it=%d Err_k=%.5g beta=%.3g", k, it, e, st.beta)
            step = st.delta
            for _ in range(6):
                try:
                    model = LinearizedModel(SurfaceProfile.spline(a + step, R), k, thetas,
                                            measurements.directions, M, n_pan=panels(k), n_sub=n_sub)
                    break
                except GeometryError:
                    step = 0.5 * step
                    log.warning("update leaves the admissible geometry; halving the step")
            else:
                raise NumericalError(f"no admissible update at k={k}")
            a = a + step
            state.coefficients = a.copy()
            it += 1
            if callback is not None:
                callback(state)
        state.stage_coefficients[float(k)] = a.copy()
    state.coefficients = a.copy()
    return state


def profile_errors(h_true: SurfaceProfile, h_app: SurfaceProfile, R: float = 1.0, n: int = 512) -> dict:
    """L2 and Linf differences on an ``n``-point grid over ``[-R, R]``."""
    x = np.linspace(-R, R, n)
    diff = h_true(x) - h_app(x)
    l2 = math.sqrt(float(trapezoid(diff**2, x)))
    return {"l2": l2, "linf": float(np.max(np.abs(diff)))}
