"""Finite-time stabilization of degenerate singular parabolic equations by impulse controls."""

from .control import (ControllabilityError, ConvergenceError, PenalizedProblem,
                      minimize_penalized, mode_controls, single_pulse_control)
from .mesh import (Degeneracy, DiscreteOperator, HardyReport, Mesh, ProblemSpec,
                   assemble_operator, build_mesh, default_gamma, hardy_report,
                   weighted_inner_product, weighted_norm)
from .propagator import mild_solution, semigroup_apply
from .schedule import ObservabilityConstants, ScheduleError, build_schedule
from .spectral import (EigensolverError, SpectralBasis, WeylFit, counting_function,
                       eigendecompose, weyl_fit)
from .stabilizer import norm_optimal_sequence, run_closed_loop, verify_decay

__all__ = [
    "ControllabilityError", "ConvergenceError", "PenalizedProblem", "minimize_penalized",
    "mode_controls", "single_pulse_control",
    "Degeneracy", "DiscreteOperator", "HardyReport", "Mesh", "ProblemSpec",
    "assemble_operator", "build_mesh", "default_gamma", "hardy_report",
    "weighted_inner_product", "weighted_norm",
    "mild_solution", "semigroup_apply",
    "ObservabilityConstants", "ScheduleError", "build_schedule",
    "EigensolverError", "SpectralBasis", "WeylFit", "counting_function", "eigendecompose",
    "weyl_fit",
    "norm_optimal_sequence", "run_closed_loop", "verify_decay",
]

__version__ = "0.1.0"
