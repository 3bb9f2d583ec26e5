"""Configuration, experiment orchestration and the ``impstab`` command line."""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .io import decay_svg, write_csv, write_json, write_text
from .mesh import (ProblemSpec, assemble_operator, build_mesh, default_gamma,
                   hardy_report)
from .propagator import mild_solution, monotonicity_check
from .rng import SplitMix64
from .schedule import ObservabilityConstants, ScheduleError, build_schedule, decay_envelope
from .spectral import EigensolverError, eigendecompose, weyl_fit
from .stabilizer import norm_optimal_sequence, run_closed_loop, verify_decay

__all__ = ["ConfigError", "RunConfig", "parse_config", "config_from_dict", "write_config",
           "run_experiment", "main", "EXPERIMENTS", "INITIAL_STATES"]

EXPERIMENTS = ("spectrum", "free", "stabilize", "norm_optimal", "hardy")
INITIAL_STATES = ("one_minus_x", "sine", "mode1", "random")

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    """Validation failure; ``path`` names the offending field, e.g. ``problem.alpha``."""

    def __init__(self, path: str, message: str, code: int = EXIT_VALIDATION):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.code = code


@dataclass
class ProblemSection:
    alpha: float = 0.5
    beta: float = 1.0
    mu: float = 0.5
    degeneracy: str = "WD"
    omega_a: float = 0.5
    horizon_T: float = 1.0


@dataclass
class MeshSection:
    n_cells: int = 2000
    gamma: object = "auto"


@dataclass
class ConstantsSection:
    C1: float = 1.0
    rho: float = 0.5
    delta: float = 0.0


@dataclass
class ScheduleSection:
    b: object = 2.0
    eta: object = 4.0
    K: int = 5


@dataclass
class SolverSection:
    method: str = "exact"
    max_iter: int = 50000
    tol_obj: float = 1e-12
    tol_residual: float = 1e-8
    tol_stop: float = 1e-12
    eps_ladder: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])


@dataclass
class RunConfig:
    experiment: str
    problem: ProblemSection
    mesh: MeshSection = field(default_factory=MeshSection)
    constants: ConstantsSection = field(default_factory=ConstantsSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    solver: SolverSection = field(default_factory=SolverSection)
    initial: str = "one_minus_x"
    seed: int = 42
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return asdict(self)

    def problem_spec(self) -> ProblemSpec:
        p = self.problem
        return ProblemSpec(p.alpha, p.beta, p.mu, p.degeneracy, p.omega_a, p.horizon_T)

    def gamma(self) -> float:
        g = self.mesh.gamma
        return default_gamma(self.problem.alpha) if g == "auto" else float(g)

    def observability(self) -> ObservabilityConstants:
        c = self.constants
        return ObservabilityConstants(c.C1, c.rho, c.delta)


_SECTIONS = {"problem": ProblemSection, "mesh": MeshSection, "constants": ConstantsSection,
             "schedule": ScheduleSection, "solver": SolverSection}
_TOP = {"experiment", "initial", "seed", "output_dir", *_SECTIONS}


def _number(path, value, *, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    return float(value)


def _check(path, ok, message):
    if not ok:
        raise ConfigError(path, message)


def _section(name, raw):
    cls = _SECTIONS[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected an object")
    known = set(cls.__dataclass_fields__)
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    return cls(**raw)


def config_from_dict(raw: dict, experiment: str | None = None) -> RunConfig:
    """Validate a decoded config; ``experiment`` overrides the file's value."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for key in raw:
        if key not in _TOP:
            raise ConfigError(key, "unknown key")
    exp = experiment if experiment is not None else raw.get("experiment")
    _check("experiment", exp in EXPERIMENTS, f"must be one of {list(EXPERIMENTS)}, got {exp!r}")
    if "problem" not in raw:
        raise ConfigError("problem", "missing required section")
    sections = {name: _section(name, raw.get(name)) for name in _SECTIONS}

    p = sections["problem"]
    for key in ("alpha", "beta", "mu", "omega_a", "horizon_T"):
        setattr(p, key, _number(f"problem.{key}", getattr(p, key)))
    _check("problem.alpha", 0.0 <= p.alpha < 2.0, f"must lie in [0, 2), got {p.alpha}")
    _check("problem.beta", p.beta > 0.0, f"must be > 0, got {p.beta}")
    _check("problem.degeneracy", p.degeneracy in ("WD", "SD"), "must be 'WD' or 'SD'")
    _check("problem.omega_a", 0.0 < p.omega_a < 1.0, f"must lie in (0, 1), got {p.omega_a}")
    _check("problem.horizon_T", p.horizon_T > 0.0, f"must be > 0, got {p.horizon_T}")

    m = sections["mesh"]
    m.n_cells = _number("mesh.n_cells", m.n_cells, integer=True)
    _check("mesh.n_cells", m.n_cells >= 4, f"must be >= 4, got {m.n_cells}")
    if m.gamma != "auto":
        m.gamma = _number("mesh.gamma", m.gamma)
        _check("mesh.gamma", m.gamma >= 1.0, f"must be >= 1 or 'auto', got {m.gamma}")

    c = sections["constants"]
    for key in ("C1", "rho", "delta"):
        setattr(c, key, _number(f"constants.{key}", getattr(c, key)))
    _check("constants.C1", c.C1 > 0, f"must be > 0, got {c.C1}")
    _check("constants.rho", 0 < c.rho < 1, f"must lie in (0, 1), got {c.rho}")
    _check("constants.delta", c.delta >= 0, f"must be >= 0, got {c.delta}")

    s = sections["schedule"]
    if s.b != "fixpoint":
        s.b = _number("schedule.b", s.b)
        _check("schedule.b", s.b > 1, f"must be > 1 or 'fixpoint', got {s.b}")
    if s.eta != "formula":
        s.eta = _number("schedule.eta", s.eta)
        _check("schedule.eta", s.eta > 1, f"must be > 1 or 'formula', got {s.eta}")
    s.K = _number("schedule.K", s.K, integer=True)
    _check("schedule.K", s.K >= 1, f"must be >= 1, got {s.K}")

    v = sections["solver"]
    _check("solver.method", v.method in ("exact", "fista"), "must be 'exact' or 'fista'")
    v.max_iter = _number("solver.max_iter", v.max_iter, integer=True)
    _check("solver.max_iter", v.max_iter >= 1, "must be >= 1")
    for key in ("tol_obj", "tol_residual", "tol_stop"):
        setattr(v, key, _number(f"solver.{key}", getattr(v, key)))
        _check(f"solver.{key}", getattr(v, key) > 0, "must be > 0")
    _check("solver.eps_ladder", isinstance(v.eps_ladder, list) and v.eps_ladder,
           "must be a non-empty list")
    v.eps_ladder = [_number(f"solver.eps_ladder[{i}]", e) for i, e in enumerate(v.eps_ladder)]
    _check("solver.eps_ladder", all(e > 0 for e in v.eps_ladder) and all(
        a > b for a, b in zip(v.eps_ladder, v.eps_ladder[1:])),
        "must be strictly decreasing positive values")

    initial = raw.get("initial", "one_minus_x")
    _check("initial", initial in INITIAL_STATES, f"must be one of {list(INITIAL_STATES)}")
    seed = _number("seed", raw.get("seed", 42), integer=True)
    _check("seed", seed >= 0, "must be >= 0")
    out = raw.get("output_dir", "out")
    _check("output_dir", isinstance(out, str) and out != "", "must be a non-empty string")

    cfg = RunConfig(experiment=exp, initial=initial, seed=seed, output_dir=out, **sections)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg.problem_spec()
    except ValueError as exc:
        msg = str(exc)
        name = msg.split(" ", 1)[0].rstrip(":")
        raise ConfigError(f"problem.{name if name in ProblemSection.__dataclass_fields__ else 'mu'}",
                          msg) from exc
    return cfg


def parse_config(path, experiment: str | None = None) -> RunConfig:
    """Read and validate a JSON config; parse errors carry exit code 2."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}", code=EXIT_IO) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"malformed JSON: {exc}", code=EXIT_PARSE) from exc
    return config_from_dict(raw, experiment)


def write_config(path, cfg: RunConfig) -> Path:
    return write_text(path, json.dumps(cfg.to_dict(), indent=2) + "\n")


def initial_state(cfg: RunConfig, basis) -> np.ndarray:
    x = basis.mesh.centers
    if cfg.initial == "one_minus_x":
        return 1.0 - x
    if cfg.initial == "sine":
        return np.sin(np.pi * x)
    if cfg.initial == "mode1":
        return np.array(basis.modes[:, 0])
    return SplitMix64(cfg.seed).uniform(x.size)


# experiment pipelines; each returns (pass flag, {filename: writer thunk})

def _spectrum(cfg, spec, basis, out):
    lam = basis.lambdas
    w = basis.mesh.widths
    gram = basis.modes.T @ (w[:, None] * basis.modes)
    ortho = float(np.max(np.abs(gram - np.eye(basis.size))))
    op = basis.operator
    res = np.array([np.linalg.norm(op.apply(basis.modes[:, j]) + lam[j] * basis.modes[:, j],
                                   np.inf) for j in range(basis.size)])
    res_rel = float(np.max(res / (1.0 + np.abs(lam))))
    fit = weyl_fit(basis, 1, basis.resolved_count)
    report = {
        "n_cells": basis.size, "gamma": basis.mesh.gamma, "lambda_1": float(lam[0]),
        "delta_h": basis.delta_h, "positive_spectrum": basis.positive_spectrum,
        "resolved_count": basis.resolved_count, "resolved_cutoff": basis.resolved_cutoff,
        "weyl_fit": {"c_alpha": fit.c_alpha, "c0": fit.c0, "max_residual": fit.max_residual,
                     "k_min": fit.k_min, "k_max": fit.k_max},
        "orthonormality_deviation": ortho, "max_relative_eigen_residual": res_rel,
        "orthonormality_pass": ortho <= 1e-10, "residual_pass": res_rel <= 1e-8,
    }
    ok = report["orthonormality_pass"] and report["residual_pass"]
    report["all_pass"] = ok
    write_csv(out / "spectrum.csv", ["k", "lambda"],
              [(k + 1, float(v)) for k, v in enumerate(lam)])
    write_json(out / "spectrum_report.json", report)
    return ok


def _free(cfg, spec, basis, out):
    y0 = initial_state(cfg, basis)
    T = spec.horizon_T
    t = np.linspace(0.0, T, 200)
    traj = mild_solution(basis, y0, [], t)
    mono = monotonicity_check(basis, y0, t)
    env = traj.y0_norm * np.exp(basis.delta_h * t)
    write_csv(out / "trajectory.csv", ["t", "norm_y", "envelope"], zip(t, traj.norms, env))
    ok = mono.max_violation <= 1e-12 * traj.y0_norm
    write_json(out / "free_report.json", {
        "y0_norm": traj.y0_norm, "delta_h": basis.delta_h, "samples": int(t.size),
        "max_violation": mono.max_violation, "monotone_pass": bool(ok), "all_pass": bool(ok)})
    return ok


def _schedule(cfg, basis):
    s = cfg.schedule
    return build_schedule(basis, cfg.observability(), cfg.problem.horizon_T, b=s.b, eta=s.eta,
                          K=s.K)


def _stabilize(cfg, spec, basis, out):
    sched = _schedule(cfg, basis)
    y0 = initial_state(cfg, basis)
    run = run_closed_loop(spec, basis, sched, y0, cfg.solver.tol_stop, method=cfg.solver.method)
    rep = verify_decay(run, sched, delta_h=basis.delta_h)
    traj = run.trajectory
    y0n = traj.y0_norm
    env = rep.C_fit * y0n * decay_envelope(sched, 1.0, traj.times)
    write_csv(out / "trajectory.csv", ["t", "norm_y", "envelope"], zip(traj.times, traj.norms, env))
    rows = []
    for k, rec in enumerate(traj.impulse_records):
        bound = math.sqrt(rep.control_bounds[k])
        rows.append((k, float(sched.t[k]), rec.tau, float(sched.Lambda[k]), int(sched.N[k]),
                     float(sched.eps[k]), rec.norm_pre, rec.norm_control, bound))
    write_csv(out / "impulses.csv", ["k", "t_k", "tau_k", "Lambda_k", "N_k", "eps_k", "norm_pre",
                                     "norm_control", "bound_impcont"], rows)
    ctrl_rows = [row for mcs in run.mode_sets for row in mcs.rows(basis)]
    write_csv(out / "controls.csv", ["k", "j", "lambda_j", "norm_h", "iterations", "residual"],
              ctrl_rows)
    report = {"schedule": sched.to_dict(), "y0_norm": y0n, "delta_h": basis.delta_h,
              "decay": rep.to_dict(),
              "mode_controls": [{"k": m.k, "N_k": int(m.mode_ids.size), "eps_k": m.eps_k,
                                 "sum_sq_norms": m.sum_sq_norms, "sum_bound": m.sum_bound,
                                 "max_terminal_norm": float(np.max(m.terminal_norms)),
                                 "cost_pass": bool(np.all(m.norms <= m.cost_bounds))}
                                for m in run.mode_sets]}
    write_json(out / "decay_report.json", report)
    t_env = np.linspace(0.0, traj.final_time, 200)
    write_text(out / "decay.svg", decay_svg(
        traj.times, traj.norms, t_env, rep.C_fit * y0n * decay_envelope(sched, 1.0, t_env),
        [r.tau for r in traj.impulse_records], y0n))
    return rep.all_pass


def _norm_optimal(cfg, spec, basis, out):
    sched = _schedule(cfg, basis)
    y0 = initial_state(cfg, basis)
    rep = norm_optimal_sequence(spec, basis, sched, y0, cfg.solver.eps_ladder,
                                tol_stop=cfg.solver.tol_stop, method=cfg.solver.method)
    write_json(out / "norm_optimal_report.json",
               {"schedule": sched.to_dict(), "delta_h": basis.delta_h, **rep.to_dict()})
    return rep.all_pass


def _hardy(cfg, spec, basis, out):
    x = basis.mesh.centers
    probes = {"x(1-x)": x * (1 - x)}
    for j in range(min(10, basis.size)):
        probes[f"mode{j + 1}"] = np.array(basis.modes[:, j])
    rows = {}
    for name, u in probes.items():
        r = hardy_report(basis.mesh, u, spec, cfg.constants.delta)
        rows[name] = asdict(r)
    ok = all(r["satisfied"] for r in rows.values())
    write_json(out / "hardy_report.json", {"mu_critical": spec.mu_critical, "probes": rows,
                                            "all_pass": bool(ok)})
    return ok


_PIPELINES = {"spectrum": _spectrum, "free": _free, "stabilize": _stabilize,
              "norm_optimal": _norm_optimal, "hardy": _hardy}


def run_experiment(cfg: RunConfig, out_dir=None) -> int:
    """Run the configured pipeline; returns the process exit code."""
    if cfg.experiment not in _PIPELINES:
        return EXIT_VALIDATION
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    spec = cfg.problem_spec()
    try:
        mesh = build_mesh(cfg.mesh.n_cells, cfg.gamma())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            basis = eigendecompose(assemble_operator(spec, mesh))
        ok = _PIPELINES[cfg.experiment](cfg, spec, basis, out)
    except ScheduleError as exc:
        print(f"error: schedule: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EigensolverError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="impstab", description="Finite-time stabilization by impulse controls.")
    parser.add_argument("experiment", help=f"one of {', '.join(EXPERIMENTS)}")
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    try:
        cfg = parse_config(args.config, experiment=args.experiment)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return run_experiment(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
