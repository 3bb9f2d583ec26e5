"""Graded cell-centred mesh on (0, 1) and the degenerate singular operator.

The operator is

    A u = (x^alpha u_x)_x + mu x^(-beta) u

discretised in flux form on cell values. ``W (-A_h)`` is a symmetric
tridiagonal matrix, where ``W = diag(widths)``, so ``A_h`` is self-adjoint for
the width-weighted inner product ``<u, v>_h = sum_i w_i u_i v_i``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Degeneracy",
    "ProblemSpec",
    "Mesh",
    "DiscreteOperator",
    "HardyReport",
    "build_mesh",
    "default_gamma",
    "assemble_operator",
    "weighted_inner_product",
    "weighted_norm",
    "hardy_report",
]

# Tolerance used to decide that beta sits exactly on the critical line 2 - alpha.
_CRITICAL_LINE_TOL = 1e-12


class Degeneracy(str, enum.Enum):
    WEAK = "WD"
    STRONG = "SD"


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemSpec:
    """Physical parameters of the controlled problem.

    Parameters
    ----------
    alpha : float
        Degeneracy exponent of the diffusion coefficient ``x**alpha``, in [0, 2).
    beta : float
        Exponent of the singular potential ``mu / x**beta``, > 0.
    mu : float
        Potential strength.
    degeneracy : Degeneracy or str
        ``"WD"`` (Dirichlet trace at 0) or ``"SD"`` (zero weighted flux at 0).
    omega_a : float
        Right end of the control region ``omega = (0, a)``.
    horizon_T : float
        Final time.
    """

    alpha: float
    beta: float
    mu: float
    degeneracy: Degeneracy = Degeneracy.WEAK
    omega_a: float = 0.5
    horizon_T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "degeneracy", Degeneracy(self.degeneracy))
        a, b, mu = float(self.alpha), float(self.beta), float(self.mu)
        for name, value in (("alpha", a), ("beta", b), ("mu", mu),
                            ("omega_a", self.omega_a), ("horizon_T", self.horizon_T)):
            if not math.isfinite(float(value)):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if not 0.0 <= a < 2.0:
            raise ValueError(f"alpha must lie in [0, 2), got {a}")
        if b <= 0.0:
            raise ValueError(f"beta must be > 0, got {b}")
        if not 0.0 < self.omega_a < 1.0:
            raise ValueError(f"omega_a must lie in (0, 1), got {self.omega_a}")
        if self.horizon_T <= 0.0:
            raise ValueError(f"horizon_T must be > 0, got {self.horizon_T}")
        if self.regime is None:
            raise ValueError(
                f"mu: parameters (alpha={a}, beta={b}, mu={mu}) are outside both the "
                f"sub-critical and the critical regime (mu_critical={self.mu_critical})"
            )
        if self.degeneracy is Degeneracy.WEAK and a >= 1.0:
            warnings.warn(f"WD boundary condition used with alpha={a} >= 1", stacklevel=3)
        if self.degeneracy is Degeneracy.STRONG and a < 1.0:
            warnings.warn(f"SD boundary condition used with alpha={a} < 1", stacklevel=3)

    @property
    def mu_critical(self) -> float:
        return (1.0 - self.alpha) ** 2 / 4.0

    @property
    def on_critical_line(self) -> bool:
        return abs(self.beta - (2.0 - self.alpha)) <= _CRITICAL_LINE_TOL

    @property
    def regime(self):
        """``"subcritical"``, ``"critical"`` or None when the triple is not admissible."""
        if self.beta < 2.0 - self.alpha - _CRITICAL_LINE_TOL:
            return "subcritical"
        if not self.on_critical_line or self.alpha == 1.0:
            return None
        if self.mu < self.mu_critical - _CRITICAL_LINE_TOL:
            return "subcritical"
        if abs(self.mu - self.mu_critical) <= _CRITICAL_LINE_TOL:
            return "critical"
        return None


@dataclass(frozen=True)
class Mesh:
    faces: np.ndarray
    gamma: float
    centers: np.ndarray = field(init=False)
    widths: np.ndarray = field(init=False)

    def __post_init__(self):
        faces = _readonly(self.faces)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "centers", _readonly(0.5 * (faces[1:] + faces[:-1])))
        object.__setattr__(self, "widths", _readonly(np.diff(faces)))

    @property
    def n_cells(self) -> int:
        return self.centers.size


def default_gamma(alpha: float) -> float:
    """Grading exponent that equidistributes the degenerate metric near x = 0."""
    return max(1.0, 2.0 / (2.0 - alpha))


def build_mesh(n_cells: int, gamma: float = 1.0) -> Mesh:
    """Mesh with faces ``(i / n_cells) ** gamma``."""
    if int(n_cells) != n_cells or n_cells < 4:
        raise ValueError(f"n_cells must be an integer >= 4, got {n_cells}")
    if not gamma >= 1.0:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    n = int(n_cells)
    faces = (np.arange(n + 1) / n) ** gamma
    faces[0], faces[-1] = 0.0, 1.0
    return Mesh(faces=faces, gamma=float(gamma))


@dataclass(frozen=True)
class DiscreteOperator:
    """Tridiagonal ``A_h`` in cell-value coordinates.

    ``lower[i]`` is the entry (i + 1, i) and ``upper[i]`` the entry (i, i + 1).
    ``face_coeffs`` holds the n + 1 face transmissibilities ``x_f**alpha / d_f``
    (``d_f`` the centre-to-centre or centre-to-boundary distance).
    """

    spec: ProblemSpec
    mesh: Mesh
    diag: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    face_coeffs: np.ndarray
    potential_values: np.ndarray

    @property
    def bc_left(self) -> Degeneracy:
        return self.spec.degeneracy

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        out = self.diag * u
        out[:-1] += self.upper * u[1:]
        out[1:] += self.lower * u[:-1]
        return out

    def stiffness(self):
        """Diagonal and off-diagonal of the symmetric matrix ``W (-A_h)``."""
        k = self.face_coeffs
        w = self.mesh.widths
        sdiag = k[:-1] + k[1:] - w * self.potential_values
        return sdiag, -k[1:-1]

    def dense(self):
        return (np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1))


def _dirichlet_left_coeff(alpha: float, c0: float) -> float:
    """Transmissibility between the ghost value at x = 0 and the first centre.

    Exact for a flux ``x^alpha u_x`` that is constant on ``(0, c0)``:
    ``1 / int_0^c0 x^-alpha dx = (1 - alpha) c0^(alpha - 1)``. The integral
    diverges for alpha >= 1, where no Dirichlet trace exists.
    """
    if alpha >= 1.0:
        return 0.0
    return (1.0 - alpha) * c0 ** (alpha - 1.0)


def assemble_operator(spec: ProblemSpec, mesh: Mesh) -> DiscreteOperator:
    """Flux-form finite-volume ``A_h`` with WD/SD left and Dirichlet right boundary."""
    if not isinstance(spec, ProblemSpec) or spec.regime is None:
        raise ValueError("assemble_operator needs a valid ProblemSpec")
    x, c, w = mesh.faces, mesh.centers, mesh.widths
    n = mesh.n_cells
    k = np.empty(n + 1)
    k[1:-1] = x[1:-1] ** spec.alpha / np.diff(c)
    k[0] = _dirichlet_left_coeff(spec.alpha, c[0]) if spec.degeneracy is Degeneracy.WEAK else 0.0
    k[-1] = 1.0 / (1.0 - c[-1])
    pot = spec.mu * c ** (-spec.beta)
    diag = -(k[:-1] + k[1:]) / w + pot
    upper = k[1:-1] / w[:-1]
    lower = k[1:-1] / w[1:]
    return DiscreteOperator(
        spec=spec, mesh=mesh, diag=_readonly(diag), lower=_readonly(lower),
        upper=_readonly(upper), face_coeffs=_readonly(k), potential_values=_readonly(pot),
    )


def _check_length(mesh: Mesh, *vectors):
    for v in vectors:
        if np.shape(v)[0] != mesh.n_cells:
            raise ValueError(f"vector length {np.shape(v)[0]} != n_cells {mesh.n_cells}")


def weighted_inner_product(mesh: Mesh, u, v) -> float:
    _check_length(mesh, u, v)
    return float(np.dot(mesh.widths * np.asarray(u, dtype=float), np.asarray(v, dtype=float)))


def weighted_norm(mesh: Mesh, u) -> float:
    _check_length(mesh, u)
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(np.dot(mesh.widths * u, u)))


@dataclass(frozen=True)
class HardyReport:
    """Discrete margins of the Hardy-Poincare inequality and of its shifted form.

    ``lhs``/``rhs``/``margin``/``satisfied`` refer to
    ``int x^a u_x^2 >= mu(a) int u^2 / x^(2-a)``; the ``improved_*`` fields to
    ``int x^a u_x^2 + delta int u^2 >= mu(a) int u^2 / x^(2-a) + nu int u^2 / x^p``.
    """

    lhs: float
    rhs: float
    margin: float
    satisfied: bool
    improved_lhs: float
    improved_rhs: float
    improved_margin: float
    improved_satisfied: bool
    delta: float
    nu: float
    exponent: float


def hardy_report(mesh: Mesh, u, spec: ProblemSpec, delta: float = 0.0, *,
                 nu: float = 1.0, exponent: float | None = None,
                 rel_tol: float = 1e-6) -> HardyReport:
    """Quadrature margins of both Hardy-Poincare inequalities for grid data ``u``.

    ``u`` is taken to vanish at both ends (ghost values 0). ``exponent`` must lie
    in (0, 2 - alpha); it defaults to ``beta`` when that is admissible.
    """
    _check_length(mesh, u)
    u = np.asarray(u, dtype=float)
    a = spec.alpha
    if exponent is None:
        exponent = spec.beta if spec.beta < 2.0 - a else 0.5 * (2.0 - a)
    x, c, w = mesh.faces, mesh.centers, mesh.widths
    ghost = np.concatenate(([0.0], u, [0.0]))
    coeff = np.concatenate(([_dirichlet_left_coeff(a, c[0])],
                            x[1:-1] ** a / np.diff(c), [1.0 / (1.0 - c[-1])]))
    grad_energy = float(np.sum(coeff * np.diff(ghost) ** 2))
    l2 = float(np.sum(w * u * u))
    singular = float(np.sum(w * u * u * c ** (a - 2.0)))
    extra = float(np.sum(w * u * u * c ** (-exponent)))

    rhs = spec.mu_critical * singular
    margin = grad_energy - rhs
    lhs2 = grad_energy + delta * l2
    rhs2 = rhs + nu * extra
    margin2 = lhs2 - rhs2
    return HardyReport(
        lhs=grad_energy, rhs=rhs, margin=margin, satisfied=bool(margin >= -rel_tol * grad_energy),
        improved_lhs=lhs2, improved_rhs=rhs2, improved_margin=margin2,
        improved_satisfied=bool(margin2 >= -rel_tol * lhs2),
        delta=float(delta), nu=float(nu), exponent=float(exponent),
    )
