"""Command-line driver: ``roughsurf <command> --config CFG --out DIR``.

Commands
    forward       far field and density for one incident field
    convergence   far-field error against the point-source closed form vs n_pan
    reciprocity   mixed reciprocity discrepancies on a grid of (y, d)
    synth         synthetic noisy far-field measurements
    reconstruct   multi-frequency profile reconstruction from measurements

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GeometryError, NumericalError
from .forward import (
    ForwardConfig,
    ForwardSolver,
    PlaneWave,
    PointSource,
    check_mixed_reciprocity,
    convergence_study,
    exact_pointsource_farfield,
    theta_from_direction,
)
from .geometry import SurfaceProfile, build_curves
from .inverse import MeasurementSet, profile_errors, reconstruct, synthesize_measurements
from .nystrom import DensitySolution, FarFieldSamples, upper_directions

log = logging.getLogger("roughsurf")

COMMANDS = ("forward", "convergence", "reciprocity", "synth", "reconstruct")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
PROFILE_GRID = 512


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path: Path, obj) -> None:
    # json.dumps already prints the shortest round-trip representation
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass
class RunSpec:
    command: str
    config: dict
    config_path: Path
    out: Path
    seed: int | None
    quiet: bool


def _get(cfg: dict, key: str, kind, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigurationError(f"config field '{key}' is required")
        return default
    value = cfg[key]
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            value = float(value)
            if not math.isfinite(value):
                raise ValueError
        elif kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            value = int(value)
        elif kind is list:
            if not isinstance(value, list):
                raise TypeError
        elif kind is dict:
            if not isinstance(value, dict):
                raise TypeError
        elif kind is str:
            if not isinstance(value, str):
                raise TypeError
    except (TypeError, ValueError):
        raise ConfigurationError(f"config field '{key}': expected {kind.__name__}, got {value!r}") from None
    return value


def _vector(value, name: str, n: int = 2) -> tuple[float, ...]:
    try:
        v = tuple(float(c) for c in value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"config field '{name}': expected a list of {n} numbers, got {value!r}") from None
    if len(v) != n or not all(math.isfinite(c) for c in v):
        raise ConfigurationError(f"config field '{name}': expected a list of {n} finite numbers, got {value!r}")
    return v


def _profile(cfg: dict) -> SurfaceProfile:
    p = _get(cfg, "profile", dict, required=True)
    try:
        return SurfaceProfile.from_dict(p)
    except ConfigurationError as exc:
        raise ConfigurationError(f"config field 'profile': {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"config field 'profile': {exc}") from None


def _aux(cfg: dict) -> tuple[tuple[float, float], float]:
    aux = _get(cfg, "aux", dict, default={})
    center = _vector(aux.get("center", (0.0, -0.5)), "aux.center")
    radius = _get(aux, "radius", float, default=0.1)
    return center, radius


def _incidence(cfg: dict):
    inc = _get(cfg, "incidence", dict, default={"type": "plane", "theta": 0.0})
    kind = inc.get("type", "plane")
    if kind == "plane":
        if "direction" in inc:
            return PlaneWave(theta_from_direction(_vector(inc["direction"], "incidence.direction")))
        return PlaneWave(_get(inc, "theta", float, default=0.0))
    if kind == "point":
        return PointSource(_vector(inc.get("y"), "incidence.y"))
    raise ConfigurationError(f"config field 'incidence.type': expected 'plane' or 'point', got {kind!r}")


def _directions(cfg: dict) -> np.ndarray:
    if "observation" in cfg:
        dirs = np.array([_vector(d, "observation") for d in _get(cfg, "observation", list)])
        if len(dirs) == 0 or np.any(np.abs(np.hypot(*dirs.T) - 1.0) > 1e-12) or np.any(dirs[:, 1] <= 0):
            raise ConfigurationError("config field 'observation': expected unit vectors with positive x2")
        return dirs
    n_f = _get(cfg, "n_f", int, default=200)
    if n_f < 1:
        raise ConfigurationError("config field 'n_f': must be positive")
    return upper_directions(n_f)


def forward_config(cfg: dict) -> ForwardConfig:
    profile = _profile(cfg)
    center, radius = _aux(cfg)
    k = _get(cfg, "k", float, required=True)
    n_pan = _get(cfg, "n_pan", int)
    return ForwardConfig(
        profile=profile,
        k=k,
        incidence=_incidence(cfg),
        R=profile.R,
        aux_center=center,
        aux_radius=radius,
        rho_imp=_get(cfg, "rho_imp", float, default=1.0),
        aux_rule=_get(cfg, "aux_rule", str, default="first-zero"),
        n_pan=n_pan,
        n_sub=_get(cfg, "n_sub", int, default=30),
        variant=_get(cfg, "variant", str, default="three-curve"),
        directions=_directions(cfg),
    )


def load_config(path: Path) -> dict:
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object")
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def _validate_geometry(fc: ForwardConfig) -> None:
    build_curves(fc.profile, fc.R, fc.aux_center, fc.aux_radius)


def cmd_forward(spec: RunSpec) -> dict:
    fc = forward_config(spec.config)
    _validate_geometry(fc)
    spec.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    solver = ForwardSolver.from_config(fc)
    t1 = time.perf_counter()
    _, phys = solver.solve(solver.rhs(fc.incidence))
    ff = FarFieldSamples(fc.directions, solver.far_field(phys, fc.directions), fc.k, fc.incidence.describe())
    t2 = time.perf_counter()
    ff.to_csv(spec.out / "farfield.csv")
    DensitySolution(phys, solver.mesh).to_csv(spec.out / "density.csv")
    summary = {
        "command": "forward",
        "k": fc.k,
        "n_pan": fc.n_pan,
        "n_sub": fc.n_sub,
        "variant": fc.variant,
        "incidence": fc.incidence.describe(),
        "profile": fc.profile.to_dict(),
        "n_f": len(fc.directions),
        "max_abs_farfield": float(np.max(np.abs(ff.values))),
        "timings": {"setup": t1 - t0, "solve": t2 - t1},
    }
    if isinstance(fc.incidence, PointSource):
        exact = exact_pointsource_farfield(fc.incidence.y, fc.k, fc.directions).values
        summary["closed_form_relative_error"] = float(np.max(np.abs(ff.values - exact) / np.abs(exact)))
        y = np.asarray(fc.incidence.y)
        summary["closed_form_applicable"] = bool(
            abs(y[1]) < float(fc.profile(np.array([y[0]]))[0])
        )
    write_json(spec.out / "summary.json", summary)
    return summary


def cmd_convergence(spec: RunSpec) -> dict:
    fc = forward_config(spec.config)
    if not isinstance(fc.incidence, PointSource):
        raise ConfigurationError("config field 'incidence': convergence needs a point source")
    n_pans = _get(spec.config, "n_pans", list, required=True)
    n_pans = [int(_get({"n_pans": n}, "n_pans", int)) for n in n_pans]
    if any(n < 4 for n in n_pans):
        raise ConfigurationError("config field 'n_pans': every entry must be >= 4")
    _validate_geometry(fc)
    spec.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = convergence_study(fc, n_pans)
    with open(spec.out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_pan", "relative_error"])
        for n, e in rows:
            w.writerow([n, fmt(e)])
    summary = {"command": "convergence", "k": fc.k, "y": list(fc.incidence.y),
               "rows": [{"n_pan": n, "relative_error": e} for n, e in rows],
               "timings": {"total": time.perf_counter() - t0}}
    write_json(spec.out / "summary.json", summary)
    return summary


def cmd_reciprocity(spec: RunSpec) -> dict:
    fc = forward_config(spec.config)
    points = [_vector(p, "points") for p in _get(spec.config, "points", list, required=True)]
    dirs = []
    for d in _get(spec.config, "directions", list, required=True):
        v = np.asarray(_vector(d, "directions"))
        if abs(np.hypot(*v) - 1.0) > 1e-12 or v[1] <= 0:
            raise ConfigurationError(f"config field 'directions': {d!r} is not an upper unit vector")
        dirs.append(v)
    _validate_geometry(fc)
    spec.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    solver = ForwardSolver.from_config(fc)
    rows = []
    for y in points:
        for d in dirs:
            rows.append((y, d, check_mixed_reciprocity(fc, y, d, solver)))
    with open(spec.out / "reciprocity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y1", "y2", "d1", "d2", "discrepancy"])
        for y, d, e in rows:
            w.writerow([fmt(y[0]), fmt(y[1]), fmt(d[0]), fmt(d[1]), fmt(e)])
    summary = {"command": "reciprocity", "k": fc.k, "max_discrepancy": max(e for *_, e in rows),
               "timings": {"total": time.perf_counter() - t0}}
    write_json(spec.out / "summary.json", summary)
    return summary


def _synth_args(cfg: dict, seed: int | None) -> dict:
    profile = _profile(cfg)
    ks = [float(k) for k in _get(cfg, "ks", list, required=True)]
    incident = [_vector(d, "incident") for d in _get(cfg, "incident", list, required=True)]
    center, radius = _aux(cfg)
    delta = _get(cfg, "delta", float, default=0.05)
    if delta < 0:
        raise ConfigurationError("config field 'delta': must be non-negative")
    return dict(
        profile=profile, ks=ks, incident=incident,
        n_f=_get(cfg, "n_f", int, default=200), delta=delta,
        seed=seed if seed is not None else _get(cfg, "seed", int, default=0),
        aux_center=center, aux_radius=radius,
        rho_imp=_get(cfg, "rho_imp", float, default=1.0),
        n_sub=_get(cfg, "n_sub", int, default=30),
        aux_rule=_get(cfg, "aux_rule", str, default="first-zero"),
    )


def cmd_synth(spec: RunSpec) -> dict:
    args = _synth_args(spec.config, spec.seed)
    build_curves(args["profile"], None, args["aux_center"], args["aux_radius"])
    if args["ks"] != sorted(set(args["ks"])) or min(args["ks"]) <= 0:
        raise ConfigurationError("config field 'ks': must be positive and strictly increasing")
    spec.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ms = synthesize_measurements(**args)
    ms.save(spec.out)
    summary = {"command": "synth", "ks": args["ks"], "delta": args["delta"], "seed": args["seed"],
               "n_f": args["n_f"], "timings": {"total": time.perf_counter() - t0}}
    write_json(spec.out / "summary.json", summary)
    return summary


def _write_profile_csv(path: Path, x, h_true, h_app) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "h_true", "h_app"])
        for i in range(len(x)):
            w.writerow([fmt(x[i]), "" if h_true is None else fmt(h_true[i]), fmt(h_app[i])])


def cmd_reconstruct(spec: RunSpec) -> dict:
    cfg = spec.config
    if "synth" in cfg:
        synth_cfg = _get(cfg, "synth", dict)
        ms = None
    else:
        mdir = Path(_get(cfg, "measurements", str, required=True))
        if not mdir.is_absolute():
            mdir = spec.config_path.parent / mdir
        ms = MeasurementSet.load(mdir)
    M = _get(cfg, "M", int, required=True)
    if M < 1:
        raise ConfigurationError("config field 'M': must be positive")
    rho_lm = _get(cfg, "rho_lm", float, default=0.8)
    tau = _get(cfg, "tau", float, default=1.5)
    max_iter = _get(cfg, "max_iter_per_k", int, default=20)
    R = _get(cfg, "R", float, default=1.0)
    n_sub = _get(cfg, "n_sub", int, default=30)
    initial = cfg.get("initial")
    if initial is not None and (not isinstance(initial, list) or len(initial) != M):
        raise ConfigurationError(f"config field 'initial': expected a list of {M} numbers")
    if not 0 < rho_lm < 1:
        raise ConfigurationError("config field 'rho_lm': must lie in (0, 1)")
    if not tau > 1:
        raise ConfigurationError("config field 'tau': must exceed 1")

    spec.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if ms is None:
        args = _synth_args(synth_cfg, spec.seed)
        ms = synthesize_measurements(**args)
        ms.save(spec.out / "measurements")
    state = reconstruct(ms, M, rho_lm, tau, initial, max_iter, R=R, n_sub=n_sub)
    state.write_trajectory(spec.out / "trajectory.csv")

    truth = SurfaceProfile.from_dict(ms.truth) if ms.truth else None
    x = np.linspace(-R, R, PROFILE_GRID)
    h_true = truth(x) if truth is not None else None
    stages = []
    for k, coeffs in state.stage_coefficients.items():
        app = SurfaceProfile.spline(coeffs, R)
        name = f"profile_k{fmt(k)}.csv"
        _write_profile_csv(spec.out / name, x, h_true, app(x))
        entry = {"k": k, "file": name, "coefficients": coeffs.tolist(), "converged": state.converged.get(k)}
        if truth is not None:
            entry.update(profile_errors(truth, app, R, PROFILE_GRID))
        stages.append(entry)
    last = {}
    for rec in state.history:
        last[rec.k] = rec.err
    summary = {
        "command": "reconstruct",
        "M": M, "rho_lm": rho_lm, "tau": tau, "delta": ms.delta, "max_iter_per_k": max_iter,
        "ks": ms.ks.tolist(),
        "final_err_k": {fmt(k): e for k, e in last.items()},
        "lm_iterations": sum(1 for r in state.history if not math.isnan(r.beta)),
        "stages": stages,
        "coefficients": state.coefficients.tolist(),
        "timings": {"total": time.perf_counter() - t0},
    }
    if truth is not None:
        summary["final_errors"] = profile_errors(truth, state.profile(R), R, PROFILE_GRID)
    write_json(spec.out / "summary.json", summary)
    return summary


HANDLERS = {
    "forward": cmd_forward,
    "convergence": cmd_convergence,
    "reciprocity": cmd_reciprocity,
    "synth": cmd_synth,
    "reconstruct": cmd_reconstruct,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughsurf", description="Scattering by a locally rough surface.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="JSON configuration file")
    p.add_argument("--out", default=Path("out"), type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="noise seed (overrides the config)")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    return p


def run(spec: RunSpec) -> dict:
    return HANDLERS[spec.command](spec)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        spec = RunSpec(args.command, cfg, args.config, args.out, args.seed, args.quiet)
        summary = run(spec)
    except (ConfigurationError, GeometryError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if not args.quiet:
        print(json.dumps({k: v for k, v in summary.items() if k in ("command", "final_errors", "max_abs_farfield",
                                                                    "closed_form_relative_error", "max_discrepancy",
                                                                    "timings")}, default=_json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
