"""Fast self-check suite behind the ``check`` command.

Each check is small enough that the whole table runs in well under a minute;
the operator factory is injectable so fault-injection tests can verify that a
corrupted build is actually caught.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .collocation import build_fd_operators
from .dictionary import enumerate_terms
from .evidence import evaluate_evidence
from .odr import Hyperparameters, Model, SolverOptions, residual_jacobian, residual_vector, solve_odr
from .selection import param_error
from .systems import TimeSeriesData

__all__ = ["CheckResult", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check_stencils(build_ops) -> CheckResult:
    worst = 0.0
    for order in (2, 4, 6):
        dt = 0.05
        n = 80
        ops = build_ops(order, n, dt)
        t = np.arange(n) * dt
        X = (t**order)[:, None]
        want = order * t[ops.interior] ** (order - 1)
        got = (ops.L_dt @ X)[:, 0]
        scale = max(1.0, float(np.abs(want).max()))
        worst = max(worst, float(np.abs(got - want).max()) / scale)
    ok = worst < 1e-9
    return CheckResult("stencil exactness", ok, f"max relative error {worst:.3e}")


def _small_instance(seed):
    rng = np.random.default_rng(seed)
    nt, dim = 20, 2
    dt = 0.1
    times = np.arange(nt) * dt
    clean = np.stack([np.sin(times), np.cos(1.3 * times)], axis=1)
    x_hat = clean + 0.05 * rng.standard_normal(clean.shape)
    data = TimeSeriesData(times=times, X_hat=x_hat, X_clean=clean, dt=dt,
                          sigma_x=0.05, noise_level=0.05, seed=int(seed))
    spec = enumerate_terms(2, 2, include_constant=True)
    ops = build_fd_operators(2, nt, dt)
    hyper = Hyperparameters(sigma_x=0.05, sigma_dt=0.05, sigma_p=10.0)
    mask = rng.random((spec.n_terms, dim)) < 0.6
    if not mask.any():
        mask[0, 0] = True
    model = Model(spec, mask, np.where(mask, rng.standard_normal(mask.shape), 0.0))
    x = (x_hat + 0.02 * rng.standard_normal(x_hat.shape)).ravel()
    return data, ops, hyper, model, x


def _check_gradient(build_ops) -> CheckResult:
    worst = 0.0
    for seed in range(5):
        data, ops, hyper, model, x = _small_instance(seed)
        xi = model.xi_active
        r = residual_vector(x, xi, data, ops, hyper, model)
        jac = residual_jacobian(x, xi, data, ops, hyper, model)
        grad = jac.T @ r
        theta = np.concatenate([x, xi])

        def loss(vec):
            rr = residual_vector(vec[: x.size], vec[x.size:], data, ops, hyper, model)
            return 0.5 * float(rr @ rr)

        fd = np.zeros_like(theta)
        for i in range(theta.size):
            h = 1e-6 * (1.0 + abs(theta[i]))
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            fd[i] = (loss(up) - loss(down)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(fd - grad) / np.linalg.norm(grad)))
    ok = worst < 1e-6
    return CheckResult("analytic gradient vs finite differences", ok, f"max relative error {worst:.3e}")


def _check_evidence_pd(build_ops) -> CheckResult:
    data, ops, hyper, model, _ = _small_instance(11)
    fit = solve_odr(data.X_hat, model.xi_active, data, ops, hyper, model,
                    SolverOptions(max_iterations=200))
    if not fit.converged:
        return CheckResult("positive-definite evidence Hessian", False, "fit did not converge")
    ev = evaluate_evidence(fit, data, ops, hyper)
    eigs = np.linalg.eigvalsh(ev.hessian)
    floor = 1.0 / hyper.sigma_p**2 - 1e-9
    resid = float(np.abs(ev.xi_covariance @ ev.hessian - np.eye(len(eigs))).max())
    ok = bool(eigs.min() >= floor) and np.isfinite(ev.log_evidence) and resid < 1e-8
    return CheckResult("positive-definite evidence Hessian", ok,
                       f"min eigenvalue {eigs.min():.3e}, cov*H-I {resid:.1e}")


def _check_param_error(build_ops) -> CheckResult:
    xi = np.array([[1.0, -2.0], [0.5, 0.0]])
    ok = param_error(xi, xi) == 0.0 and abs(param_error(1.1 * xi, xi) - 0.1) < 1e-12
    return CheckResult("parameter-error identities", ok, "0 and 0.1 identities")


def run_checks(build_ops=build_fd_operators) -> list[CheckResult]:
    """Run the invariant suite; pass a corrupted operator factory to fault-inject."""
    return [
        _check_stencils(build_ops),
        _check_gradient(build_ops),
        _check_evidence_pd(build_ops),
        _check_param_error(build_ops),
    ]
