"""Closed-loop impulsive stabilization and the checks of its decay estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import PenalizedProblem, apply_Lk, minimize_penalized, mode_controls
from .mesh import ProblemSpec
from .propagator import ImpulseEvent, Trajectory, mild_solution, omega_cells, omega_norm
from .schedule import ImpulseSchedule, decay_envelope
from .spectral import SpectralBasis

__all__ = [
    "REACHED_K",
    "BELOW_TOL",
    "DEFAULT_FLOOR",
    "ClosedLoopRun",
    "DecayReport",
    "NormOptimalReport",
    "run_closed_loop",
    "verify_decay",
    "norm_optimal_sequence",
    "uniqueness_probe",
]

REACHED_K = "ReachedK"
BELOW_TOL = "BelowTol"

# Floor on squared-norm bounds, relative to ||y0||^2.
DEFAULT_FLOOR = 1e-13

# Final control norm, relative to ||y0||, counted as vanished.
VANISH_TOL = 1e-10


@dataclass
class ClosedLoopRun:
    """Trajectory of a closed-loop run together with the per-interval controls."""

    trajectory: Trajectory
    mode_sets: list = field(default_factory=list)
    control_norms: np.ndarray = field(default_factory=lambda: np.empty(0))
    schedule: ImpulseSchedule | None = None

    @property
    def computed_K(self) -> int:
        return len(self.mode_sets)


def _interval_samples(t_k, tau_k, t_k1, m):
    interior = t_k + (t_k1 - t_k) * np.arange(1, m + 1) / (m + 1)
    return np.unique(np.concatenate(([t_k, tau_k], interior)))


def _run(basis, spec, schedule, y0, tol_stop, samples_per_interval, impulse_for):
    """Shared driver: ``impulse_for(k, y_k_grid)`` returns (omega control, extra)."""
    y0 = np.asarray(y0, dtype=float)
    if schedule.lambda_1 != float(basis.lambdas[0]):
        raise ValueError("schedule was built for a different spectral basis")
    c = basis.coefficients(y0)
    y0_norm = float(np.linalg.norm(c))
    times, norms, records, extras = [], [], [], []
    cp_t, cp_n = [0.0], [y0_norm]
    reason = REACHED_K
    for k in range(schedule.K):
        t_k, tau_k, t_k1 = schedule.interval(k)
        y_grid = basis.synthesize(c)
        h, extra = impulse_for(k, y_grid)
        extras.append(extra)
        local = _interval_samples(t_k, tau_k, t_k1, samples_per_interval) - t_k
        traj = mild_solution(basis, y_grid, [ImpulseEvent(k, tau_k - t_k, h)],
                             np.append(local, t_k1 - t_k))
        times.extend(local + t_k)
        norms.extend(traj.norms[:-1])
        rec = traj.impulse_records[0]
        records.append(rec._replace(tau=tau_k, norm_control=omega_norm(basis.mesh, h)))
        c = traj.final_coeffs
        cp_t.append(t_k1)
        cp_n.append(float(np.linalg.norm(c)))
        if cp_n[k] <= tol_stop * y0_norm and k < schedule.K - 1:
            reason = BELOW_TOL
            break
    times.append(cp_t[-1])
    norms.append(cp_n[-1])
    trajectory = Trajectory(
        times=np.array(times), norms=np.array(norms), impulse_records=records,
        checkpoint_times=np.array(cp_t), checkpoint_norms=np.array(cp_n),
        truncation_reason=reason, y0_norm=y0_norm, final_time=cp_t[-1], final_coeffs=c)
    return trajectory, extras


def run_closed_loop(spec: ProblemSpec, basis: SpectralBasis, schedule: ImpulseSchedule, y0,
                    tol_stop: float = 1e-12, *, samples_per_interval: int = 8,
                    feedback: bool = True, method: str = "exact") -> ClosedLoopRun:
    """Impulsive system with ``y(tau_k) = y(tau_k^-) + 1_omega L_k(y(t_k))``.

    The run stops after interval ``k`` when ``||y(t_k)|| <= tol_stop ||y0||``.
    ``feedback=False`` applies zero impulses (free flow with the same bookkeeping).
    """
    if samples_per_interval < 8:
        raise ValueError("samples_per_interval must be >= 8")
    n_omega = omega_cells(basis.mesh, spec.omega_a)

    def impulse_for(k, y_grid):
        if not feedback:
            return np.zeros(n_omega), None
        mcs = mode_controls(basis, spec, schedule, k, method=method)
        return apply_Lk(mcs, basis, y_grid), mcs

    traj, sets = _run(basis, spec, schedule, y0, tol_stop, samples_per_interval, impulse_for)
    ctrl = np.array([r.norm_control for r in traj.impulse_records])
    return ClosedLoopRun(trajectory=traj, mode_sets=[s for s in sets if s is not None],
                         control_norms=ctrl, schedule=schedule)


@dataclass
class DecayReport:
    checkpoint_norms: list
    cumulative_bounds: list
    cumulative_pass: list
    chained_bounds: list
    chained_pass: list
    contraction_bounds: list
    contraction: list
    control_norms: list
    control_bounds: list
    control_bound_pass: list
    vanishing_monotone: bool
    vanishing_final: bool
    piecewise_monotone: bool
    C_fit: float
    C_theory: float
    L0_bound: float
    C2: float
    M_decay: float
    floor: float
    truncation_reason: str

    @property
    def envelope_pass(self) -> bool:
        return bool(self.C_fit <= self.C_theory)

    @property
    def all_pass(self) -> bool:
        return bool(all(self.cumulative_pass[1:]) and all(self.contraction)
                    and all(self.control_bound_pass) and self.vanishing_monotone
                    and self.vanishing_final and self.piecewise_monotone and self.envelope_pass)

    def to_dict(self) -> dict:
        keys = ("checkpoint_norms", "cumulative_bounds", "cumulative_pass", "chained_bounds",
                "chained_pass", "contraction_bounds",
                "contraction", "control_norms", "control_bounds", "control_bound_pass",
                "vanishing_monotone", "vanishing_final", "piecewise_monotone", "C_fit",
                "C_theory", "L0_bound", "C2", "M_decay", "floor", "truncation_reason")
        out = {key: getattr(self, key) for key in keys}
        out["envelope_pass"] = self.envelope_pass
        out["all_pass"] = self.all_pass
        return out


def _piecewise_monotone(traj: Trajectory, delta_h: float) -> bool:
    """``e^{-delta_h t} ||y(t)||`` non-increasing between consecutive impulses."""
    t, n = traj.times, traj.norms
    taus = [r.tau for r in traj.impulse_records]
    breaks = np.searchsorted(t, taus, side="left")
    tol = 1e-12 * max(traj.y0_norm, 0.0)
    for seg in np.split(np.arange(t.size), breaks):
        if seg.size < 2:
            continue
        w = np.exp(-delta_h * t[seg]) * n[seg]
        if np.any(np.diff(w) > tol):
            return False
    return True


def verify_decay(run: ClosedLoopRun, schedule: ImpulseSchedule, report_floor: float = DEFAULT_FLOOR,
                 *, delta_h: float = 0.0) -> DecayReport:
    """Check the per-interval estimates and fit the envelope prefactor.

    Squared bounds are compared as ``max(bound, report_floor ||y0||^2)``.
    ``cumulative_*`` is the cumulative bound ``e^{2k - eta b^k}`` at every
    checkpoint (k = 0 included, where it cannot hold for y0 != 0);
    ``chained_*`` is what the per-interval contractions actually compose to,
    ``e^{2k - eta (b^k - 1)/(b - 1)}``.
    """
    traj = run.trajectory
    y0n = traj.y0_norm
    y0sq = y0n ** 2
    fl = report_floor * y0sq
    eta, b = schedule.eta, schedule.b
    cp = [float(x) for x in traj.checkpoint_norms]

    cum_b, cum, ch_b, ch = [], [], [], []
    for k, nk in enumerate(cp):
        bound = math.exp(2 * k - eta * b ** k) * y0sq
        cum_b.append(bound)
        cum.append(bool(nk ** 2 <= max(bound, fl)))
        # product of the per-interval contraction factors over intervals 0..k-1
        chained = math.exp(2 * k - eta * (b ** k - 1.0) / (b - 1.0)) * y0sq
        ch_b.append(chained)
        ch.append(bool(nk ** 2 <= max(chained, fl)))
    con_b, con = [], []
    for k in range(len(cp) - 1):
        bound = math.exp(2.0 - eta * b ** k) * cp[k] ** 2
        con_b.append(bound)
        con.append(bool(cp[k + 1] ** 2 <= max(bound, fl)))
    ctrl = [float(x) for x in run.control_norms]
    ctl_b, ctl = [], []
    for k, ck in enumerate(ctrl):
        bound = schedule.C2 * math.exp(2 * k - eta * b ** k / 8.0) * y0sq
        ctl_b.append(bound)
        ctl.append(bool(ck ** 2 <= max(bound, fl)))
    later = ctrl[1:]
    monotone = bool(all(later[i + 1] <= later[i] for i in range(len(later) - 1)))
    final = bool(not ctrl or ctrl[-1] <= VANISH_TOL * y0n)

    if y0n == 0.0:
        C_fit = 0.0
    else:
        mask = traj.times < traj.final_time
        env = decay_envelope(schedule, 1.0, traj.times[mask])
        C_fit = float(np.max(traj.norms[mask] / (env * y0n))) if mask.any() else 0.0
    L0 = run.mode_sets[0].operator_norm_bound if run.mode_sets else 0.0
    delta = max(schedule.consts.delta, delta_h)
    C_theory = 2.0 * (1.0 + schedule.C2 + L0 ** 2) * math.exp(delta * schedule.T)
    return DecayReport(
        checkpoint_norms=cp, cumulative_bounds=cum_b, cumulative_pass=cum, chained_bounds=ch_b,
        chained_pass=ch, contraction_bounds=con_b,
        contraction=con, control_norms=ctrl, control_bounds=ctl_b, control_bound_pass=ctl,
        vanishing_monotone=monotone, vanishing_final=final,
        piecewise_monotone=_piecewise_monotone(traj, delta_h), C_fit=C_fit, C_theory=C_theory,
        L0_bound=L0, C2=schedule.C2, M_decay=schedule.M_decay, floor=report_floor,
        truncation_reason=traj.truncation_reason)


@dataclass
class NormOptimalReport:
    eps_ladder: list
    seq_norms: list
    per_k_norms: list
    per_k_bounds: list
    per_k_bound_pass: list
    ratios: list
    boundedness_pass: bool
    terminal_norms: list
    terminal_bounds: list
    terminal_pass: list
    ratio_limit: float = 1.5

    @property
    def all_pass(self) -> bool:
        return bool(self.boundedness_pass and all(self.terminal_pass)
                    and all(all(p) for p in self.per_k_bound_pass))

    def to_dict(self) -> dict:
        keys = ("eps_ladder", "seq_norms", "per_k_norms", "per_k_bounds", "per_k_bound_pass",
                "ratios", "ratio_limit", "boundedness_pass", "terminal_norms",
                "terminal_bounds", "terminal_pass")
        out = {key: getattr(self, key) for key in keys}
        out["all_pass"] = self.all_pass
        return out


def norm_optimal_sequence(spec: ProblemSpec, basis: SpectralBasis, schedule: ImpulseSchedule,
                          y0, eps_ladder, *, tol_stop: float = 1e-12, method: str = "exact",
                          ratio_limit: float = 1.5,
                          samples_per_interval: int = 8) -> NormOptimalReport:
    """Closed loop driven by the penalized minimizers ``u_{eps,k}`` for each ``eps``.

    ``seq_norms[i]`` is ``sum_k ||u_{eps_i,k}||_omega^2``. Per-k controls are
    compared with ``sqrt(C2) e^{-k} ||y0||^2``; terminal norms with
    ``eps e^{(T / b^K) delta_h} ||y0||``.
    """
    ladder = [float(e) for e in eps_ladder]
    if not ladder or any(e <= 0 for e in ladder) or any(
            ladder[i + 1] >= ladder[i] for i in range(len(ladder) - 1)):
        raise ValueError("eps_ladder must be strictly decreasing positive values")
    y0 = np.asarray(y0, dtype=float)
    y0n = float(np.linalg.norm(basis.coefficients(y0)))
    C = math.sqrt(schedule.C2)
    n_omega = omega_cells(basis.mesh, spec.omega_a)
    seq, per_k, per_b, per_p, term, term_b, term_p = [], [], [], [], [], [], []
    for eps in ladder:
        def impulse_for(k, y_grid, eps=eps):
            t_k, tau_k, t_k1 = schedule.interval(k)
            prob = PenalizedProblem(basis, spec, t_k1 - tau_k, t_k1 - t_k, y_grid, eps)
            if prob.y0_norm == 0.0:
                return np.zeros(n_omega), None
            return minimize_penalized(prob, method=method).u_opt, None

        traj, _ = _run(basis, spec, schedule, y0, tol_stop, samples_per_interval, impulse_for)
        norms = [r.norm_control for r in traj.impulse_records]
        seq.append(float(sum(x * x for x in norms)))
        per_k.append([float(x) for x in norms])
        bounds = [C * math.exp(-k) * y0n ** 2 for k in range(len(norms))]
        per_b.append(bounds)
        per_p.append([bool(x <= max(bd, math.sqrt(DEFAULT_FLOOR) * y0n))
                      for x, bd in zip(norms, bounds)])
        tb = eps * math.exp(schedule.T / schedule.b ** schedule.K * basis.delta_h) * y0n
        term.append(float(traj.checkpoint_norms[-1]))
        term_b.append(tb)
        term_p.append(bool(term[-1] <= tb))
    ratios = [seq[i + 1] / seq[i] if seq[i] > 0 else (0.0 if seq[i + 1] == 0 else math.inf)
              for i in range(len(seq) - 1)]
    return NormOptimalReport(
        eps_ladder=ladder, seq_norms=seq, per_k_norms=per_k, per_k_bounds=per_b,
        per_k_bound_pass=per_p, ratios=ratios,
        boundedness_pass=bool(all(r <= ratio_limit for r in ratios)),
        terminal_norms=term, terminal_bounds=term_b, terminal_pass=term_p,
        ratio_limit=ratio_limit)


def uniqueness_probe(prob: PenalizedProblem, n_starts: int = 5, *, rng=None,
                     method: str = "fista", scale: float | None = None, **solver_kw) -> float:
    """Max pairwise relative deviation of minimizers from 0 and ``n_starts`` random starts.

    ``rng`` is a :class:`impstab.rng.SplitMix64`; starts are uniform in
    ``[-scale, scale]`` per cell, with ``scale`` defaulting to ``||y0||``.
    """
    from .rng import SplitMix64

    rng = rng or SplitMix64(42)
    if prob.y0_norm == 0.0:
        return 0.0
    scale = prob.y0_norm if scale is None else scale
    sols = [minimize_penalized(prob, method=method, **solver_kw).v_coeffs]
    for _ in range(n_starts):
        v0 = scale * rng.uniform(prob.basis.size)
        sols.append(minimize_penalized(prob, v0=v0, method="fista", **solver_kw).v_coeffs)
    dev = 0.0
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            denom = max(np.linalg.norm(sols[i]), np.linalg.norm(sols[j]))
            if denom > 0:
                dev = max(dev, float(np.linalg.norm(sols[i] - sols[j]) / denom))
    return dev
