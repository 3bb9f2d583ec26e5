"""Single-pulse approximate null controls from the penalized dual functional.

For an interval ``[t_k, t_{k+1}]`` with pulse time ``tau_k`` write
``s = t_{k+1} - tau_k`` and ``r = t_{k+1} - t_k``. The functional is

    J(v) = 1/2 ||R e^{s A} v||_omega^2 + <y0, e^{r A} v> + eps ||y0|| ||v||

with ``R`` the restriction to omega. Its minimizer ``v*`` yields the control
``h = R e^{s A} v*`` and the terminal state ``grad f(v*) = e^{sA} E h + e^{rA} y0``,
whose norm is at most ``eps ||y0||`` by first-order optimality.

All solvers work in spectral coefficients, where ``||v||_h`` is the Euclidean
norm and ``R e^{sA}`` becomes the matrix ``O = diag(sqrt(w_omega)) Phi_omega D_s``.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .mesh import ProblemSpec
from .propagator import ImpulseEvent, mild_solution, omega_cells, omega_norm
from .schedule import ImpulseSchedule, cost_bound_log, cost_constant_M
from .spectral import SpectralBasis

__all__ = [
    "ConvergenceError",
    "ControllabilityError",
    "PenalizedProblem",
    "PenalizedSolution",
    "PulseControl",
    "ModeControlSet",
    "smooth_value",
    "smooth_gradient",
    "prox_norm",
    "minimize_penalized",
    "single_pulse_control",
    "mode_controls",
    "apply_Lk",
    "mode_cost_bound",
    "NORM_FLOOR",
]

# Relative norm floor below which bounds are not asserted (sqrt of 1e-13 on squared norms).
NORM_FLOOR = math.sqrt(1e-13)

# Modes whose decay factor exp(-lambda_j s) is below this fraction of the largest one
# are treated as unobservable (their contribution to R e^{sA} is below rounding).
_ACTIVE_CUTOFF = 1e-20


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted; ``last`` holds the final iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class ControllabilityError(RuntimeError):
    """Terminal verification failed after all penalty refinements."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class _ObservationFactor:
    """Thin SVD of the coefficient-space observation matrix for one ``s``."""

    def __init__(self, basis: SpectralBasis, n_omega: int, s: float, n_modes: int):
        lam = basis.lambdas[:n_modes]
        ds = np.exp(-(lam - lam[0]) * s) * math.exp(-lam[0] * s)
        self.ds = ds
        self.active = np.flatnonzero(ds >= _ACTIVE_CUTOFF * ds.max())
        sqw = np.sqrt(basis.mesh.widths[:n_omega])
        self.sqw = sqw
        O = sqw[:, None] * basis.modes[:n_omega, self.active] * ds[self.active][None, :]
        self.O = O
        U, sig, Vt = np.linalg.svd(O, full_matrices=False)
        self.U, self.sigma, self.Vt = U, sig, Vt


_FACTOR_CACHE: "weakref.WeakKeyDictionary[SpectralBasis, dict]" = weakref.WeakKeyDictionary()


def _factor(basis: SpectralBasis, n_omega: int, s: float, n_modes: int) -> _ObservationFactor:
    cache = _FACTOR_CACHE.setdefault(basis, {})
    key = (n_omega, float(s), n_modes)
    if key not in cache:
        if len(cache) > 16:
            cache.clear()
        cache[key] = _ObservationFactor(basis, n_omega, s, n_modes)
    return cache[key]


@dataclass(frozen=True, eq=False)
class PenalizedProblem:
    """Data of one penalized minimization.

    ``n_modes`` truncates the coefficient space to the leading modes (Galerkin
    truncation); None keeps all of them.
    """

    basis: SpectralBasis
    spec: ProblemSpec
    s: float
    r: float
    y0: np.ndarray
    eps_pen: float
    n_modes: int | None = None

    def __post_init__(self):
        if not 0 < self.s < self.r:
            raise ValueError(f"need 0 < s < r, got s={self.s}, r={self.r}")
        if not self.eps_pen > 0:
            raise ValueError(f"eps_pen must be > 0, got {self.eps_pen}")
        y0 = np.asarray(self.y0, dtype=float)
        if y0.shape != (self.basis.size,):
            raise ValueError(f"y0 has shape {y0.shape}, expected ({self.basis.size},)")
        if self.n_modes is not None and not 1 <= self.n_modes <= self.basis.size:
            raise ValueError(f"n_modes must lie in [1, {self.basis.size}]")
        object.__setattr__(self, "y0", y0)

    @property
    def m(self) -> int:
        return self.basis.size if self.n_modes is None else int(self.n_modes)

    @property
    def n_omega(self) -> int:
        return omega_cells(self.basis.mesh, self.spec.omega_a)

    @property
    def y0_coeffs(self) -> np.ndarray:
        return self.basis.coefficients(self.y0)[:self.m]

    @property
    def y0_norm(self) -> float:
        return float(np.linalg.norm(self.y0_coeffs))

    @property
    def theta(self) -> float:
        """Weight of the nonsmooth term, ``eps_pen * ||y0||``."""
        return self.eps_pen * self.y0_norm

    @property
    def linear_term(self) -> np.ndarray:
        """Coefficients of ``e^{rA} y0``."""
        return np.exp(-self.basis.lambdas[:self.m] * self.r) * self.y0_coeffs

    @property
    def admissible(self) -> bool:
        """``||e^{rA} y0|| > eps_pen ||y0||``; otherwise v = 0 is optimal."""
        return bool(np.linalg.norm(self.linear_term) > self.theta)

    @property
    def lipschitz(self) -> float:
        lam1 = float(self.basis.lambdas[0])
        if lam1 > 0:
            return math.exp(-2.0 * lam1 * self.s)
        return math.exp(2.0 * self.basis.delta_h * self.s)

    def factor(self) -> _ObservationFactor:
        return _factor(self.basis, self.n_omega, self.s, self.m)

    # coefficient-space helpers
    def _observe(self, a):
        f = self.factor()
        return f.O @ a[f.active]

    def _hess(self, a):
        f = self.factor()
        out = np.zeros_like(a)
        out[f.active] = f.O.T @ (f.O @ a[f.active])
        return out

    def _to_coeffs(self, v):
        """Coefficients of a grid vector, truncated to the problem's modes."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.basis.size,):
            raise ValueError(f"expected a grid vector of length {self.basis.size}, got {v.shape}")
        return self.basis.coefficients(v)[:self.m]

    def _to_grid(self, a):
        return self.basis.modes[:, :self.m] @ a

    def control_from_coeffs(self, a) -> np.ndarray:
        """``R e^{sA} v`` as cell values on omega."""
        f = self.factor()
        return self._observe(a) / f.sqw


@dataclass
class PenalizedSolution:
    v_opt: np.ndarray
    u_opt: np.ndarray
    iterations: int
    optimality_residual: float
    objective_value: float
    v_coeffs: np.ndarray = field(repr=False, default=None)
    terminal_coeffs: np.ndarray = field(repr=False, default=None)
    method: str = "fista"
    multiplier: float = float("nan")

    @property
    def terminal_norm(self) -> float:
        return float(np.linalg.norm(self.terminal_coeffs))


def prox_norm(z, theta: float):
    """Proximal map of ``theta ||.||``: ``(1 - theta/||z||)_+ z``."""
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    z = np.asarray(z, dtype=float)
    nz = float(np.linalg.norm(z))
    if nz <= theta:
        return np.zeros_like(z)
    return (1.0 - theta / nz) * z


def smooth_value(prob: PenalizedProblem, v) -> float:
    """``f(v) = 1/2 ||R e^{sA} v||_omega^2 + <y0, e^{rA} v>_h``."""
    a = prob._to_coeffs(v)
    o = prob._observe(a)
    return 0.5 * float(o @ o) + float(prob.linear_term @ a)


def smooth_gradient(prob: PenalizedProblem, v):
    """``e^{sA} E R e^{sA} v + e^{rA} y0`` as a grid vector."""
    a = prob._to_coeffs(v)
    return prob._to_grid(prob._hess(a) + prob.linear_term)


def _residual(grad, a, theta) -> float:
    na = float(np.linalg.norm(a))
    ng = float(np.linalg.norm(grad))
    if na == 0.0:
        r = max(0.0, ng - theta)
    else:
        r = float(np.linalg.norm(grad + theta * a / na))
    return r / (1.0 + ng)


def _objective(prob, a, theta):
    o = prob._observe(a)
    return 0.5 * float(o @ o) + float(prob.linear_term @ a) + theta * float(np.linalg.norm(a))


def _package(prob, a, grad, it, res, obj, method, mult=float("nan")):
    return PenalizedSolution(
        v_opt=prob._to_grid(a), u_opt=prob.control_from_coeffs(a), iterations=it,
        optimality_residual=res, objective_value=obj, v_coeffs=a, terminal_coeffs=grad,
        method=method, multiplier=mult)


def _fista(prob, a0, max_iter, tol_obj, tol_residual, restart):
    theta = prob.theta
    g = prob.linear_term
    step = 1.0 / prob.lipschitz
    x = a0.copy()
    y = x.copy()
    t = 1.0
    obj = _objective(prob, x, theta)
    res = float("inf")
    for it in range(1, max_iter + 1):
        grad_y = prob._hess(y) + g
        x_new = prox_norm(y - step * grad_y, step * theta)
        obj_new = _objective(prob, x_new, theta)
        if restart and np.dot(y - x_new, x_new - x) > 0:
            t = 1.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        change = abs(obj_new - obj) / max(abs(obj_new), abs(obj), 1e-300)
        x, t, obj = x_new, t_new, obj_new
        if change < tol_obj or obj == 0.0:
            grad = prob._hess(x) + g
            res = _residual(grad, x, theta)
            if res < tol_residual:
                return _package(prob, x, grad, it, res, obj, "fista")
    grad = prob._hess(x) + g
    res = _residual(grad, x, theta)
    raise ConvergenceError(
        f"proximal gradient did not converge in {max_iter} iterations (residual {res:.3g})",
        last=_package(prob, x, grad, max_iter, res, obj, "fista"))


def _exact(prob):
    """Minimizer from the secular equation ``||mu (H + mu)^-1 g|| = theta``.

    For ``v != 0`` optimality reads ``(H + mu) v = -g`` with ``mu = theta/||v||``.
    In the SVD basis of ``O`` this is a scalar root-finding problem in ``mu``.
    """
    f = prob.factor()
    g = prob.linear_term
    theta = prob.theta
    m = g.size
    g_act = g[f.active]
    gt = f.Vt @ g_act
    g_perp = g_act - f.Vt.T @ gt
    inactive = np.ones(m, dtype=bool)
    inactive[f.active] = False
    g_inact = g[inactive]
    null2 = float(g_perp @ g_perp + g_inact @ g_inact)
    sig2 = f.sigma ** 2
    gnorm = float(np.linalg.norm(g))
    if theta >= gnorm:
        a = np.zeros(m)
        return _package(prob, a, g.copy(), 0, _residual(g, a, theta), 0.0, "exact", math.inf)
    if null2 >= theta ** 2:
        raise ConvergenceError(
            f"penalty {prob.eps_pen:.3g} is below the reach of the observable modes: "
            f"the unobservable part of e^(rA) y0 has norm {math.sqrt(null2):.3g} > {theta:.3g}")

    def psi(logmu):
        mu = math.exp(logmu)
        q = mu / (sig2 + mu) * gt
        return 0.5 * math.log(float(q @ q) + null2) - math.log(theta)

    hi = math.log(max(float(sig2.max()) if sig2.size else 1.0, 1e-300)) + 5.0
    while psi(hi) <= 0.0:
        hi += 10.0
    lo = hi - 10.0
    while psi(lo) >= 0.0:
        lo -= 10.0
        if lo < -700.0:
            raise ConvergenceError("secular equation has no root above the underflow limit")
    logmu = brentq(psi, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    mu = math.exp(logmu)

    b = -gt / (sig2 + mu)
    a = np.zeros(m)
    a[f.active] = f.Vt.T @ b - g_perp / mu
    a[inactive] = -g_inact / mu
    # terminal state H a + g, assembled without cancellation
    term = np.empty(m)
    term[f.active] = f.Vt.T @ (mu / (sig2 + mu) * gt) + g_perp
    term[inactive] = g_inact
    h = (f.U @ (f.sigma * b)) / f.sqw
    na = float(np.linalg.norm(a))
    # first-order residual in the SVD coordinates: sigma^2 b + g~ + (theta/||a||) b
    lam_ratio = theta / na
    r_vec = np.concatenate((sig2 * b + gt + lam_ratio * b,
                            (1.0 - lam_ratio / mu) * g_perp,
                            (1.0 - lam_ratio / mu) * g_inact))
    res = float(np.linalg.norm(r_vec)) / (1.0 + float(np.linalg.norm(term)))
    o = f.sigma * b
    obj = 0.5 * float(o @ o) + float(g @ a) + theta * na
    sol = PenalizedSolution(v_opt=prob._to_grid(a), u_opt=h, iterations=1,
                            optimality_residual=res, objective_value=obj, v_coeffs=a,
                            terminal_coeffs=term, method="exact", multiplier=mu)
    return sol


def minimize_penalized(prob: PenalizedProblem, v0=None, method: str = "fista",
                       max_iter: int = 50000, tol_obj: float = 1e-12,
                       tol_residual: float = 1e-8, restart: bool = True) -> PenalizedSolution:
    """Minimize ``f(v) + eps_pen ||y0|| ||v||``.

    Parameters
    ----------
    prob : PenalizedProblem
    v0 : array, optional
        Starting grid vector; defaults to 0.
    method : {"fista", "exact"}
        ``"fista"`` is accelerated proximal gradient with step ``1/L`` and
        optional gradient-based restart. ``"exact"`` solves the first-order
        conditions through an SVD of the observation matrix and is the one used
        for closed-loop synthesis, where penalties down to 1e-15 make first-order
        iterations impractical.
    """
    if prob.admissible is False and v0 is None:
        a = np.zeros(prob.m)
        g = prob.linear_term
        return _package(prob, a, g.copy(), 0, _residual(g, a, prob.theta), 0.0, method)
    if method == "exact":
        return _exact(prob)
    if method != "fista":
        raise ValueError(f"unknown method {method!r}")
    a0 = np.zeros(prob.m) if v0 is None else prob._to_coeffs(v0).copy()
    return _fista(prob, a0, max_iter, tol_obj, tol_residual, restart)


@dataclass
class PulseControl:
    """Verified single-pulse control and its diagnostics."""

    h: np.ndarray
    h_norm: float
    terminal_norm: float
    threshold: float
    eps_target: float
    eps_used: float
    refinements: int
    solution: PenalizedSolution
    cost_bound: float
    cost_bound_log: float

    @property
    def cost_pass(self) -> bool:
        return bool(self.h_norm <= self.cost_bound)


def single_pulse_control(basis: SpectralBasis, spec: ProblemSpec, y0, t_k: float,
                         tau_k: float, t_k1: float, eps_target: float, *,
                         consts=None, method: str = "exact", safety: float = 1.05,
                         max_refine: int = 6, floor: float = NORM_FLOOR,
                         **solver_kw) -> PulseControl:
    """Control ``h`` on omega, applied at ``tau_k``, with ``||y(t_{k+1})|| <= 1.05 eps ||y0||``.

    The terminal state is re-simulated with :func:`mild_solution`. Targets below
    ``floor`` are checked against ``floor`` instead; if such a target fails
    (rounding makes it unreachable) the penalty is reset to ``floor / safety``.
    Further failures halve ``eps_pen``, at most ``max_refine`` times.

    The cost bound uses the interval-local horizon: final time ``t_{k+1} - t_k``
    and pulse time ``tau_k - t_k``.
    """
    from .schedule import ObservabilityConstants

    if not t_k < tau_k < t_k1:
        raise ValueError(f"need t_k < tau_k < t_k1, got {t_k}, {tau_k}, {t_k1}")
    if not eps_target > 0:
        raise ValueError(f"eps_target must be > 0, got {eps_target}")
    consts = consts or ObservabilityConstants()
    y0 = np.asarray(y0, dtype=float)
    s, r = t_k1 - tau_k, t_k1 - t_k
    y0_norm = float(np.linalg.norm(basis.coefficients(y0)))
    threshold = max(safety * eps_target, floor) * y0_norm
    M = cost_constant_M(consts, r, tau_k - t_k, eps_target)
    M_log = cost_bound_log(consts, r, tau_k - t_k, eps_target)

    eps_pen = eps_target
    history = []
    attempt = 0
    while True:
        prob = PenalizedProblem(basis, spec, s, r, y0, eps_pen)
        try:
            sol = minimize_penalized(prob, method=method, **solver_kw)
            h = sol.u_opt
            traj = mild_solution(basis, y0, [ImpulseEvent(0, tau_k - t_k, h)], [r])
            term = float(traj.norms[-1])
        except ConvergenceError:
            sol, term = None, math.inf
        history.append((eps_pen, term))
        if term <= threshold:
            return PulseControl(h=h, h_norm=omega_norm(basis.mesh, h), terminal_norm=term,
                                threshold=threshold, eps_target=eps_target, eps_used=eps_pen,
                                refinements=len(history) - 1, solution=sol,
                                cost_bound=M * y0_norm, cost_bound_log=M_log * y0_norm)
        if eps_pen < floor / safety:
            # Target below double-precision reach: retry at the floor level.
            eps_pen = floor / safety
            continue
        if attempt == max_refine:
            break
        attempt += 1
        eps_pen *= 0.5
    raise ControllabilityError(
        f"terminal norm {history[-1][1]:.3g} exceeds {threshold:.3g} after {max_refine} refinements",
        diagnostics={"history": history, "threshold": threshold, "y0_norm": y0_norm})


def mode_cost_bound(consts, schedule: ImpulseSchedule, k: int) -> float:
    """Per-mode bound on ``||h_j||_omega^2`` for interval ``k``.

    ``exp(4 C1 (1 + delta + delta (t_{k+1} + t_k) + 1/r))
    * exp(2 sqrt(2) C1 / sqrt(r) * sqrt(ln(e + e^{eta b^k} N_k)))`` with ``r = t_{k+1} - t_k``.
    """
    t_k, _, t_k1 = schedule.interval(k)
    r = t_k1 - t_k
    C1, d = consts.C1, consts.delta
    log_arg = math.log(math.e + math.exp(schedule.eta * schedule.b ** k) * int(schedule.N[k]))
    return math.exp(4.0 * C1 * (1.0 + d + d * (t_k1 + t_k) + 1.0 / r)
                    + 2.0 * math.sqrt(2.0) * C1 / math.sqrt(r) * math.sqrt(log_arg))


@dataclass
class ModeControlSet:
    """Controls ``h_j`` for the modes ``lambda_j <= Lambda_k`` (rows of ``controls``)."""

    k: int
    Lambda_k: float
    mode_ids: np.ndarray
    controls: np.ndarray
    norms: np.ndarray
    terminal_norms: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    eps_used: np.ndarray
    eps_k: float
    cost_bounds: np.ndarray
    mode_bound: float

    @property
    def sum_sq_norms(self) -> float:
        return float(np.sum(self.norms ** 2))

    @property
    def operator_norm_bound(self) -> float:
        """``sqrt(sum ||h_j||^2)``, an upper bound on the norm of ``L_k``."""
        return math.sqrt(self.sum_sq_norms)

    @property
    def sum_bound(self) -> float:
        return self.mode_bound * self.mode_ids.size

    def rows(self, basis: SpectralBasis):
        """Report rows ``(k, j, lambda_j, ||h_j||, iterations, residual)`` (j 1-based)."""
        return [(self.k, int(j) + 1, float(basis.lambdas[j]), float(nrm), int(it), float(res))
                for j, nrm, it, res in zip(self.mode_ids, self.norms, self.iterations,
                                           self.residuals)]


def mode_controls(basis: SpectralBasis, spec: ProblemSpec, schedule: ImpulseSchedule,
                  k: int, *, method: str = "exact", **kw) -> ModeControlSet:
    """Per-mode controls ``h_j`` steering ``phi_j`` to ``eps_k`` on interval ``k``."""
    if not 0 <= k < schedule.K:
        raise ValueError(f"k={k} outside [0, {schedule.K})")
    t_k, tau_k, t_k1 = schedule.interval(k)
    N = int(schedule.N[k])
    eps_k = float(schedule.eps[k])
    n_omega = omega_cells(basis.mesh, spec.omega_a)
    controls = np.zeros((N, n_omega))
    fields = {name: np.zeros(N) for name in
              ("norms", "terminal_norms", "iterations", "residuals", "eps_used", "cost_bounds")}
    for j in range(N):
        pc = single_pulse_control(basis, spec, basis.modes[:, j], t_k, tau_k, t_k1, eps_k,
                                  consts=schedule.consts, method=method, **kw)
        controls[j] = pc.h
        fields["norms"][j] = pc.h_norm
        fields["terminal_norms"][j] = pc.terminal_norm
        fields["iterations"][j] = pc.solution.iterations
        fields["residuals"][j] = pc.solution.optimality_residual
        fields["eps_used"][j] = pc.eps_used
        fields["cost_bounds"][j] = pc.cost_bound
    fields["iterations"] = fields["iterations"].astype(int)
    return ModeControlSet(k=k, Lambda_k=float(schedule.Lambda[k]), mode_ids=np.arange(N),
                          controls=controls, eps_k=eps_k,
                          mode_bound=mode_cost_bound(schedule.consts, schedule, k), **fields)


def apply_Lk(mcs: ModeControlSet, basis: SpectralBasis, v) -> np.ndarray:
    """``sum_{lambda_j <= Lambda_k} <v, phi_j>_h h_j`` on omega."""
    c = basis.coefficients(v)[mcs.mode_ids]
    return c @ mcs.controls
