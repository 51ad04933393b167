"""Laplace-approximated log Bayesian evidence of a converged fit.

The evidence of a candidate sparsity pattern is evaluated at the optimum
(X*, xi*) from the curvature of the loss along the solution manifold
X = X*(xi).  Differentiating the stationarity condition dL/dX = 0 gives a
banded linear system for the state sensitivities dX*/dxi; chaining them into
the residuals yields the Gauss-Newton Hessian d2L/dxi dxi, a sum of Gram
matrices plus the prior 1/sigma_p^2 identity, hence symmetric positive
definite by construction.  The log evidence is

    -( L(xi*, X*) + N/2 * (log 2pi + 2 log sigma_p) + 1/2 log|H / 2pi| )

with N the number of active coefficients.  A finite-difference full-Hessian
mode exists for validating that the Gauss-Newton shortcut does not change
model rankings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_banded

from .dictionary import theta_hessian_rows
from .odr import FitResult, Hyperparameters, OdrWorkspace, SolverOptions, solve_x_given_xi

__all__ = [
    "EvidenceMethod",
    "EvidenceResult",
    "solve_dx_dxi",
    "gauss_newton_hessian",
    "full_hessian_fd",
    "log_evidence",
    "evaluate_evidence",
]


class EvidenceMethod(str, Enum):
    gauss_newton = "gauss_newton"
    full_hessian = "full_hessian"


@dataclass(frozen=True, eq=False)
class EvidenceResult:
    log_evidence: float
    hessian: np.ndarray
    xi_covariance: np.ndarray | None
    method: EvidenceMethod


def _require_converged(fit: FitResult):
    if not fit.converged:
        raise ValueError("evidence evaluation requires a converged fit")


def _context(fit, data, ops, hyper):
    ws = OdrWorkspace(data, ops, hyper, fit.model.spec, fit.model.mask)
    fw = ws.forward(fit.x_star.ravel(), fit.model.xi_active)
    lin = ws.linearize(fw)
    return ws, fw, lin


def _x_hessian_general_banded(ws, fw, lin, include_second_order):
    """d2L/dX dX in LAPACK general-banded storage (2*bw+1, n)."""
    bw, n = ws.bandwidth_x, ws.n_x
    lower = ws.lower_banded_hessian(lin)
    ab = np.zeros((2 * bw + 1, n))
    ab[bw] = lower[0]
    for k in range(1, bw + 1):
        ab[bw + k] = lower[k]
        ab[bw - k, k:] = lower[k, : n - k]
    if include_second_order:
        # eta-weighted curvature of the dictionary: a D x D block at each
        # interior sample.
        hess_i = theta_hessian_rows(ws.spec, fw.X[ws.ops.interior])
        blocks = -np.einsum("knef,nd,kd->kef", hess_i, fw.xi_full, fw.eta) / ws.hyper.sigma_dt**2
        nd = ws.N * ws.D
        for e in range(ws.D):
            for f in range(ws.D):
                start = ws.h * ws.D + f
                ab[bw + e - f, start:start + nd:ws.D] += blocks[:, e, f]
    return ab


def _solve_dx_dxi(ws, fw, lin, include_second_order):
    h = ws.hyper
    ab = _x_hessian_general_banded(ws, fw, lin, include_second_order)
    b = ws.coupling_raw(lin).copy()
    if include_second_order:
        # mixed term: -eta[i, e] * dTheta[i, n, d] at interior rows (i, d),
        # column (n, e) over active entries.
        eta_a = fw.eta[:, ws.state_idx]             # (N, n_active)
        mixed = -(lin.jac_t[:, :, ws.term_idx] * eta_a[:, None, :])
        b[ws.h * ws.D:(ws.h + ws.N) * ws.D] += mixed.reshape(ws.N * ws.D, ws.n_active)
    b = -b / h.sigma_dt**2
    try:
        return solve_banded((ws.bandwidth_x, ws.bandwidth_x), ab, b, check_finite=False)
    except LinAlgError as exc:  # data term makes A PD; reaching here is a bug signal
        raise RuntimeError("state-Hessian solve failed; system unexpectedly singular") from exc


def solve_dx_dxi(fit: FitResult, data, ops, hyper: Hyperparameters,
                 include_second_order: bool = True) -> np.ndarray:
    """State sensitivities dX*/dxi as an (n_samples*D, n_active) matrix.

    Solves A S = B where A = d2L/dX dX at the optimum (banded) and B collects
    the mixed second derivatives -d2L/dX dxi.  With include_second_order=False
    the eta-weighted dictionary-curvature terms are dropped, which makes A the
    Gauss-Newton inner Hessian (SPD by construction) at the price of a small
    approximation.
    """
    _require_converged(fit)
    ws, fw, lin = _context(fit, data, ops, hyper)
    return _solve_dx_dxi(ws, fw, lin, include_second_order)


def _gauss_newton_hessian(ws, lin, dx_dxi):
    h = ws.hyper
    u = ws.g_matvec(lin, dx_dxi)
    u3 = u.reshape(ws.N, ws.D, ws.n_active)
    u3[:, ws.state_idx, ws._col_ids] -= lin.theta_sel
    hess = (u.T @ u) / h.sigma_dt**2
    hess += (dx_dxi.T @ dx_dxi) / h.sigma_x**2
    hess[np.diag_indices_from(hess)] += 1.0 / h.sigma_p**2
    return 0.5 * (hess + hess.T)


def gauss_newton_hessian(fit: FitResult, dx_dxi: np.ndarray, data, ops,
                         hyper: Hyperparameters) -> np.ndarray:
    """Gauss-Newton d2L/dxi dxi along the solution manifold (n_active square)."""
    _require_converged(fit)
    ws, fw, lin = _context(fit, data, ops, hyper)
    return _gauss_newton_hessian(ws, lin, dx_dxi)


def full_hessian_fd(fit: FitResult, data, ops, hyper: Hyperparameters,
                    step_scale: float = 1e-5) -> np.ndarray:
    """Full d2L/dxi dxi by central differences of the analytic total gradient.

    Each probe re-minimizes the states at perturbed coefficients, so the
    result includes the curvature of the solution manifold that Gauss-Newton
    drops.  Validation mode only: cost is 2*n_active inner solves.
    """
    _require_converged(fit)
    xi0 = fit.model.xi_active
    n = xi0.size
    inner_opts = SolverOptions(g_tol=1e-18, x_tol=1e-15, f_tol=1e-16, max_iterations=600)
    hess = np.zeros((n, n))
    for a in range(n):
        delta = step_scale * (1.0 + abs(xi0[a]))
        grads = []
        for sign in (1.0, -1.0):
            xi_p = xi0.copy()
            xi_p[a] += sign * delta
            inner = solve_x_given_xi(fit.x_star, xi_p, data, ops, hyper,
                                     fit.model.with_coefficients(xi_p), inner_opts)
            ws = OdrWorkspace(data, ops, hyper, fit.model.spec, fit.model.mask)
            fw = ws.forward(inner.x_star.ravel(), xi_p)
            lin = ws.linearize(fw)
            # dL/dxi along the manifold equals the partial gradient at the
            # inner optimum (envelope theorem).
            grads.append(lin.g_xi)
        hess[a] = (grads[0] - grads[1]) / (2.0 * delta)
    return 0.5 * (hess + hess.T)


def log_evidence(fit: FitResult, hessian: np.ndarray, hyper: Hyperparameters) -> float:
    """Laplace log evidence from the loss optimum and coefficient Hessian.

    Returns -inf (with a warning) if the Hessian fails its positive-definite
    factorization; such a model is effectively disqualified, consistent with
    treating non-convergence as a retention signal.
    """
    n = hessian.shape[0]
    try:
        c, _ = cho_factor(hessian, lower=True)
    except LinAlgError:
        warnings.warn("coefficient Hessian not positive definite; evidence set to -inf")
        return -np.inf
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    log2pi = np.log(2.0 * np.pi)
    return -(fit.loss_total
             + 0.5 * n * (log2pi + 2.0 * np.log(hyper.sigma_p))
             + 0.5 * (logdet - n * log2pi))


def evaluate_evidence(fit: FitResult, data, ops, hyper: Hyperparameters,
                      method: EvidenceMethod | str = EvidenceMethod.gauss_newton,
                      include_second_order: bool = True) -> EvidenceResult:
    """Compute hessian, covariance and log evidence; stamps them onto the fit."""
    _require_converged(fit)
    method = EvidenceMethod(method)
    if method is EvidenceMethod.gauss_newton:
        ws, fw, lin = _context(fit, data, ops, hyper)
        sens = _solve_dx_dxi(ws, fw, lin, include_second_order)
        hess = _gauss_newton_hessian(ws, lin, sens)
    else:
        hess = full_hessian_fd(fit, data, ops, hyper)
    value = log_evidence(fit, hess, hyper)
    cov = None
    if np.isfinite(value):
        c = cho_factor(hess, lower=True)
        cov = cho_solve(c, np.eye(hess.shape[0]))
        cov = 0.5 * (cov + cov.T)
    fit.hessian = hess
    fit.log_evidence = value
    return EvidenceResult(log_evidence=value, hessian=hess, xi_covariance=cov, method=method)
