"""Sparse governing-equation discovery from noisy time series.

Jointly denoises the observed states and estimates sparse model coefficients
by soft-constrained orthogonal distance regression, then selects the model
structure by greedy maximization of the Laplace-approximated Bayesian
evidence.
"""

from .collocation import CollocationOperators, build_fd_operators
from .dictionary import (LibrarySpec, enumerate_terms, eval_theta,
                         eval_theta_hessian, eval_theta_jacobian, monomial_name)
from .evidence import (EvidenceMethod, EvidenceResult, evaluate_evidence,
                       full_hessian_fd, gauss_newton_hessian, log_evidence,
                       solve_dx_dxi)
from .io import format_equations, read_trajectory_csv, write_trajectory_csv
from .odr import (FitResult, Hyperparameters, Model, SolverOptions,
                  residual_jacobian, residual_vector, solve_odr, solve_x_given_xi)
from .selection import (SelectionOptions, SelectionResult, bootstrap_linear_init,
                        fit_full_library, greedy_select, masks_equal, param_error)
from .systems import (SystemDef, TimeSeriesData, add_noise, get_system,
                      ground_truth_model, integrate, lorenz63, rossler, vanderpol)

__version__ = "0.1.0"

__all__ = [
    "CollocationOperators", "build_fd_operators",
    "LibrarySpec", "enumerate_terms", "eval_theta", "eval_theta_jacobian",
    "eval_theta_hessian", "monomial_name",
    "EvidenceMethod", "EvidenceResult", "evaluate_evidence", "full_hessian_fd",
    "gauss_newton_hessian", "log_evidence", "solve_dx_dxi",
    "format_equations", "read_trajectory_csv", "write_trajectory_csv",
    "FitResult", "Hyperparameters", "Model", "SolverOptions",
    "residual_jacobian", "residual_vector", "solve_odr", "solve_x_given_xi",
    "SelectionOptions", "SelectionResult", "bootstrap_linear_init",
    "fit_full_library", "greedy_select", "masks_equal", "param_error",
    "SystemDef", "TimeSeriesData", "add_noise", "get_system",
    "ground_truth_model", "integrate", "lorenz63", "rossler", "vanderpol",
]
