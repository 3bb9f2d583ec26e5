"""Impulse time grid, spectral cutoffs, tolerances and the named constants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .spectral import SpectralBasis, counting_function

__all__ = [
    "ScheduleError",
    "ObservabilityConstants",
    "ImpulseSchedule",
    "FixpointResult",
    "eta_of",
    "fixpoint_b",
    "build_schedule",
    "decay_envelope",
    "cost_constant_M",
    "cost_bound_log",
]


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ObservabilityConstants:
    """Constants of the one-time observability estimate (``C1``, ``rho``) and the Hardy shift."""

    C1: float = 1.0
    rho: float = 0.5
    delta: float = 0.0

    def __post_init__(self):
        if not self.C1 > 0:
            raise ValueError(f"C1 must be > 0, got {self.C1}")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


def _bracket(consts: ObservabilityConstants, b: float, T: float) -> float:
    return (1.0 + consts.delta + consts.delta * T
            + (1.0 + consts.C1) * b / (T * (b - 1.0)))


def eta_of(b: float, consts: ObservabilityConstants, T: float) -> float:
    """``1 + 32 C1 (1 + delta + delta T + (1 + C1) b / (T (b - 1)))``."""
    if not b > 1:
        raise ScheduleError(f"b must be > 1, got {b}")
    if not T > 0:
        raise ScheduleError(f"T must be > 0, got {T}")
    return 1.0 + 32.0 * consts.C1 * _bracket(consts, b, T)


class FixpointResult(NamedTuple):
    b: float
    converged: bool
    iterations: int
    residual: float


def fixpoint_b(consts: ObservabilityConstants, T: float, b_init: float = 2.0,
               max_iter: int = 500, tol: float = 1e-10) -> FixpointResult:
    """Damped iteration ``b <- sqrt(b * exp(32 / eta(b)))`` for ``b = exp(32 / eta(b))``.

    ``tol`` is relative: the iteration stops once ``|b - exp(32/eta(b))| < tol * b``.
    Reports ``converged=False`` when the iterate collapses to ``b - 1 < 1e-6``
    or ``max_iter`` is exhausted.
    """
    if not b_init > 1:
        raise ScheduleError(f"b_init must be > 1, got {b_init}")
    b = float(b_init)
    for it in range(max_iter + 1):
        target = math.exp(32.0 / eta_of(b, consts, T))
        residual = abs(b - target)
        if residual < tol * b:
            return FixpointResult(b, True, it, residual)
        if it == max_iter:
            break
        b = math.sqrt(b * target)
        if b - 1.0 < 1e-6:
            return FixpointResult(b, False, it + 1, abs(b - math.exp(32.0 / eta_of(b, consts, T)))
                                  if b > 1 else float("nan"))
    return FixpointResult(b, False, max_iter, residual)


@dataclass(frozen=True, eq=False)
class ImpulseSchedule:
    """Impulse times ``t_k``, ``tau_k`` and per-interval data for k = 0 .. K-1."""

    T: float
    b: float
    eta: float
    K: int
    t: np.ndarray
    tau: np.ndarray
    Lambda: np.ndarray
    N: np.ndarray
    eps: np.ndarray
    lambda_1: float
    C0: float
    consts: ObservabilityConstants
    b_source: str = "configured"
    fixpoint: FixpointResult | None = None

    @property
    def M_decay(self) -> float:
        return 16.0 * self.b / self.eta

    @property
    def C2(self) -> float:
        base = (12.0 * self.C0 / self.eta) ** 2 * (
            self.lambda_1 + self.eta / self.T * self.b / (self.b - 1.0))
        return max(base, 0.0) ** 0.75

    def interval(self, k: int):
        """``(t_k, tau_k, t_{k+1})``."""
        return float(self.t[k]), float(self.tau[k]), float(self.t[k + 1])

    def to_dict(self) -> dict:
        return {
            "T": self.T, "b": self.b, "b_source": self.b_source, "eta": self.eta,
            "K": self.K, "M_decay": self.M_decay, "C0": self.C0, "C2": self.C2,
            "lambda_1": self.lambda_1,
            "t": self.t.tolist(), "tau": self.tau.tolist(),
            "Lambda": self.Lambda.tolist(), "N": [int(n) for n in self.N],
            "eps": self.eps.tolist(),
            "fixpoint": None if self.fixpoint is None else self.fixpoint._asdict(),
        }


def build_schedule(basis: SpectralBasis, consts: ObservabilityConstants, T: float,
                   b: float | str = 2.0, eta: float | str = 4.0, K: int = 5,
                   fallback_b: float = 2.0) -> ImpulseSchedule:
    """Assemble the schedule.

    ``b="fixpoint"`` runs :func:`fixpoint_b` and falls back to ``fallback_b``
    when it does not converge; ``eta="formula"`` uses :func:`eta_of`.
    """
    if int(K) != K or K < 1:
        raise ScheduleError(f"K must be an integer >= 1, got {K}")
    K = int(K)
    fp = None
    source = "configured"
    if b == "fixpoint":
        fp = fixpoint_b(consts, T, b_init=fallback_b)
        b, source = (fp.b, "fixpoint") if fp.converged else (fallback_b, "fallback")
    b = float(b)
    if not b > 1:
        raise ScheduleError(f"b must be > 1, got {b}")
    eta = eta_of(b, consts, T) if eta == "formula" else float(eta)
    if not eta > 1:
        raise ScheduleError(f"eta must be > 1, got {eta}")

    k = np.arange(K + 1, dtype=float)
    t = T * (1.0 - b ** -k)
    tau = 0.5 * (t[:-1] + t[1:])
    lam1 = float(basis.lambdas[0])
    kk = k[:-1]
    Lambda = lam1 + (eta / T) * b ** (2 * kk + 1) / (b - 1.0)
    if Lambda[-1] > basis.resolved_cutoff:
        raise ScheduleError(
            f"cutoff Lambda_{K - 1}={Lambda[-1]:.6g} exceeds the resolved spectrum "
            f"(lambda_{basis.resolved_count}={basis.resolved_cutoff:.6g}); refine the mesh or lower K")
    N = np.array([counting_function(basis, L) for L in Lambda], dtype=int)
    eps = np.exp(-0.5 * (eta * b ** kk + np.log(N)))
    if np.any(eps <= 0) or not np.all(np.isfinite(eps)):
        raise ScheduleError("eps_k underflows; lower K or eta")
    for arr in (t, tau, Lambda, N, eps):
        arr.setflags(write=False)
    return ImpulseSchedule(T=float(T), b=b, eta=eta, K=K, t=t, tau=tau, Lambda=Lambda, N=N,
                           eps=eps, lambda_1=lam1, C0=float(basis.counting_constant),
                           consts=consts, b_source=source, fixpoint=fp)


def decay_envelope(schedule: ImpulseSchedule, C_prefactor: float, t):
    """``C exp(-(T / (T - t)) / M_decay)`` for ``0 <= t < T``."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= schedule.T) or np.any(t < 0):
        raise ValueError("decay_envelope needs 0 <= t < T")
    out = C_prefactor * np.exp(-(schedule.T / (schedule.T - t)) / schedule.M_decay)
    return float(out) if out.ndim == 0 else out


def _observability_exponent(consts: ObservabilityConstants, T: float, tau: float) -> float:
    return consts.C1 * (1.0 + consts.delta + consts.delta * (T + tau) + 1.0 / (T - tau))


def cost_constant_M(consts: ObservabilityConstants, T: float, tau: float, eps: float) -> float:
    """``eps^(-(1 - rho)/rho) exp(C1 (1 + delta + delta (T + tau) + 1/(T - tau)))``."""
    if not 0 < tau < T:
        raise ValueError(f"need 0 < tau < T, got tau={tau}, T={T}")
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    return eps ** (-(1.0 - consts.rho) / consts.rho) * math.exp(
        _observability_exponent(consts, T, tau))


def cost_bound_log(consts: ObservabilityConstants, T: float, tau: float, eps: float) -> float:
    """Control-cost bound with the logarithmic eps dependence:
    ``exp(C1 (...)) exp(C1 / sqrt(T - tau) * sqrt(ln(e + 1/eps^2)))``."""
    if not 0 < tau < T:
        raise ValueError(f"need 0 < tau < T, got tau={tau}, T={T}")
    return math.exp(_observability_exponent(consts, T, tau)
                    + consts.C1 / math.sqrt(T - tau) * math.sqrt(math.log(math.e + eps ** -2.0)))
