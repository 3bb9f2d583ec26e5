"""Exact-in-time propagation through the spectral basis.

States are grid vectors of cell values. Everything is evaluated in spectral
coefficients, so there is no time-stepping error: ``e^{t A_h} v`` is
``sum_j exp(-lambda_j t) <v, phi_j>_h phi_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .mesh import Mesh, ProblemSpec
from .spectral import SpectralBasis

__all__ = [
    "ImpulseEvent",
    "ImpulseRecord",
    "Trajectory",
    "omega_cells",
    "restrict_omega",
    "extend_omega",
    "omega_inner_product",
    "omega_norm",
    "semigroup_apply",
    "mild_solution",
    "monotonicity_check",
]


def omega_cells(mesh: Mesh, omega_a: float) -> int:
    """Number of leading cells whose centre lies in ``(0, omega_a)``."""
    n_omega = int(np.searchsorted(mesh.centers, omega_a, side="left"))
    if n_omega < 2:
        raise ValueError(f"omega=(0, {omega_a}) resolves to {n_omega} cell(s); need >= 2")
    return n_omega


def restrict_omega(mesh: Mesh, spec: ProblemSpec, v):
    v = np.asarray(v, dtype=float)
    return v[:omega_cells(mesh, spec.omega_a)].copy()


def extend_omega(mesh: Mesh, spec: ProblemSpec, g):
    g = np.asarray(g, dtype=float)
    n_omega = omega_cells(mesh, spec.omega_a)
    if g.shape[0] != n_omega:
        raise ValueError(f"omega vector has length {g.shape[0]}, expected {n_omega}")
    out = np.zeros(mesh.n_cells)
    out[:n_omega] = g
    return out


def omega_inner_product(mesh: Mesh, g, h) -> float:
    g = np.asarray(g, dtype=float)
    return float(np.dot(mesh.widths[:g.shape[0]] * g, np.asarray(h, dtype=float)))


def omega_norm(mesh: Mesh, g) -> float:
    return float(np.sqrt(max(omega_inner_product(mesh, g, g), 0.0)))


def semigroup_apply(basis: SpectralBasis, t: float, v):
    """``e^{t A_h} v`` for ``t >= 0``."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return basis.synthesize(np.exp(-basis.lambdas * t) * basis.coefficients(v))


@dataclass(frozen=True)
class ImpulseEvent:
    """Impulse ``y(tau) = y(tau^-) + 1_omega control``; ``control`` lives on omega cells."""

    k: int
    tau: float
    control: np.ndarray
    control_norm: float = float("nan")


class ImpulseRecord(NamedTuple):
    k: int
    tau: float
    norm_pre: float
    norm_control: float


@dataclass
class Trajectory:
    """Sampled norms of a (possibly impulsive) solution.

    ``norms[i]`` is ``||y(times[i])||_h``; at an impulse time the sample is the
    post-impulse state and ``impulse_records`` carries the pre-impulse norm.
    """

    times: np.ndarray
    norms: np.ndarray
    impulse_records: list = field(default_factory=list)
    checkpoint_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    checkpoint_norms: np.ndarray = field(default_factory=lambda: np.empty(0))
    truncation_reason: str | None = None
    y0_norm: float = float("nan")
    final_time: float = float("nan")
    final_coeffs: np.ndarray | None = None


def _free(lambdas, coeffs, dt):
    return np.exp(-lambdas * dt) * coeffs


def mild_solution(basis: SpectralBasis, y0, impulses: Sequence[ImpulseEvent],
                  sample_times) -> Trajectory:
    """Variation-of-constants solution sampled at ``sample_times``.

    ``y(t) = e^{t A} y0 + sum_{tau_k <= t} e^{(t - tau_k) A} 1_omega g_k``.
    """
    sample_times = np.asarray(sample_times, dtype=float)
    taus = np.array([ev.tau for ev in impulses], dtype=float)
    if np.any(np.diff(sample_times) < 0):
        raise ValueError("sample_times must be sorted")
    if np.any(np.diff(taus) <= 0):
        raise ValueError("impulse times must be strictly increasing")
    if sample_times.size and sample_times[0] < 0:
        raise ValueError("sample_times must be >= 0")
    if taus.size and taus[0] <= 0:
        raise ValueError("impulse times must be > 0")

    lam = basis.lambdas
    c = basis.coefficients(y0)
    t_cur = 0.0
    norms = np.empty(sample_times.size)
    records = []
    i_imp = 0
    for i, t in enumerate(sample_times):
        while i_imp < len(impulses) and taus[i_imp] <= t:
            ev = impulses[i_imp]
            c = _free(lam, c, ev.tau - t_cur)
            t_cur = ev.tau
            norm_pre = float(np.linalg.norm(c))
            g = np.zeros(basis.size)
            g[:ev.control.shape[0]] = ev.control
            c = c + basis.coefficients(g)
            records.append(ImpulseRecord(ev.k, ev.tau, norm_pre,
                                         omega_norm(basis.mesh, ev.control)))
            i_imp += 1
        c = _free(lam, c, t - t_cur)
        t_cur = t
        norms[i] = np.linalg.norm(c)
    return Trajectory(times=sample_times.copy(), norms=norms, impulse_records=records,
                      y0_norm=float(np.linalg.norm(basis.coefficients(y0))),
                      final_time=t_cur, final_coeffs=c)


class MonotonicityResult(NamedTuple):
    max_violation: float
    delta_h: float


def monotonicity_check(basis: SpectralBasis, y0, t_grid) -> MonotonicityResult:
    """Largest increase of ``exp(-delta_h t) ||y(t)||`` between consecutive samples of the free flow."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be sorted")
    c = basis.coefficients(y0)
    dh = basis.delta_h
    weighted = np.array([np.exp(-dh * t) * np.linalg.norm(np.exp(-basis.lambdas * t) * c)
                         for t in t_grid])
    viol = float(np.max(np.diff(weighted))) if t_grid.size > 1 else 0.0
    return MonotonicityResult(viol, dh)
