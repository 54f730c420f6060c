"""Initialized fractional linear systems: memory simulation and steering controls.

Modules
-------
specfun   gamma, Mittag-Leffler (scalar/matrix), alpha-exponential, memory kernel
fraccalc  Riemann-Liouville integrals and derivatives on uniform grids
system    trajectories and order-beta memory of ``D^alpha x = A x + B u``
steering  beta-Gramian, minimum-energy, rank and Kalman steering laws
cli       ``fracmem`` command-line front end
"""
__version__ = "0.1.0"

from .errors import (ConvergenceError, DimensionError, DomainError, FracMemError,
                     IntegrabilityError, OrderError, PrecisionWarning, RankError,
                     SingularGramianError)
from .fraccalc import (GridFn, SingularKernel, TimeGrid, conv_singular, frac_integral_left,
                       frac_integral_right, rl_compose, rl_derivative)
from .specfun import Order, alpha_exp, gamma, ml_matrix, ml_scalar, phi_beta
from .steering import (GramianResult, SteeringProblem, SteeringResult, energy, f_target,
                       gramian, kalman_matrices, kalman_steering, optimal_control,
                       rank_steering, verify_steering)
from .system import Constant, Control, FracSystem, Sampled, history_psi, memory, trajectory

__all__ = [
    "__version__",
    "FracMemError", "DomainError", "OrderError", "DimensionError", "ConvergenceError",
    "IntegrabilityError", "SingularGramianError", "RankError", "PrecisionWarning",
    "Order", "gamma", "ml_scalar", "ml_matrix", "alpha_exp", "phi_beta",
    "TimeGrid", "GridFn", "SingularKernel", "conv_singular", "frac_integral_left",
    "frac_integral_right", "rl_derivative", "rl_compose",
    "Constant", "Sampled", "FracSystem", "Control", "history_psi", "trajectory", "memory",
    "SteeringProblem", "GramianResult", "SteeringResult", "gramian", "f_target",
    "optimal_control", "energy", "rank_steering", "kalman_matrices", "kalman_steering",
    "verify_steering",
]
