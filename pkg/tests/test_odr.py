import numpy as np
import pytest

from odrsindy.collocation import build_fd_operators
from odrsindy.dictionary import enumerate_terms
from odrsindy.odr import (Hyperparameters, Model, SolverOptions, residual_jacobian,
                          residual_vector, solve_odr, solve_x_given_xi)
from odrsindy.systems import TimeSeriesData, add_noise, ground_truth_model, integrate, lorenz63, vanderpol


def small_instance(seed, nt=20, dim=2, noise=0.05, order=2, poly=2):
    """Random smooth data, random mask and coefficients: gradient-check fodder."""
    rng = np.random.default_rng(seed)
    dt = 0.1
    times = np.arange(nt) * dt
    clean = np.stack([np.sin((j + 1.0) * times + j) for j in range(dim)], axis=1)
    x_hat = clean + noise * rng.standard_normal(clean.shape)
    data = TimeSeriesData(times=times, X_hat=x_hat, X_clean=clean, dt=dt,
                          sigma_x=max(noise, 1e-3), noise_level=noise, seed=seed)
    spec = enumerate_terms(dim, poly, True)
    ops = build_fd_operators(order, nt, dt)
    hyper = Hyperparameters(sigma_x=max(noise, 1e-3), sigma_dt=0.05, sigma_p=10.0)
    mask = rng.random((spec.n_terms, dim)) < 0.6
    if not mask.any():
        mask[1, 0] = True
    model = Model(spec, mask, np.where(mask, 0.5 * rng.standard_normal(mask.shape), 0.0))
    x = (x_hat + 0.05 * rng.standard_normal(x_hat.shape)).ravel()
    return data, ops, hyper, model, x


def test_hyperparameters_must_be_positive():
    with pytest.raises(ValueError):
        Hyperparameters(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        Hyperparameters(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        Hyperparameters(1.0, 1.0, np.inf)


def test_model_validation():
    spec = enumerate_terms(2, 2, True)
    mask = np.zeros((spec.n_terms, 2), dtype=bool)
    with pytest.raises(ValueError):
        Model(spec, mask, np.zeros((spec.n_terms, 2)))
    mask[1, 0] = True
    xi = np.zeros((spec.n_terms, 2))
    xi[2, 1] = 3.0  # off-mask value
    with pytest.raises(ValueError):
        Model(spec, mask, xi)


def test_residual_zero_on_constant_data_with_zero_xi():
    nt, dim = 15, 2
    times = np.arange(nt) * 0.1
    const = np.tile([1.5, -2.0], (nt, 1))
    data = TimeSeriesData(times=times, X_hat=const, X_clean=const, dt=0.1,
                          sigma_x=0.1, noise_level=0.0, seed=0)
    spec = enumerate_terms(dim, 2, True)
    ops = build_fd_operators(2, nt, 0.1)
    hyper = Hyperparameters(0.1, 0.1, 1.0)
    mask = np.zeros((spec.n_terms, dim), dtype=bool)
    mask[0, :] = True
    model = Model(spec, mask, np.zeros((spec.n_terms, dim)))
    r = residual_vector(const.ravel(), np.zeros(2), data, ops, hyper, model)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)
    assert r.size == nt * dim + ops.n_rows * dim + 2


def test_loss_decomposition_at_data_with_zero_xi():
    data, ops, hyper, model, _ = small_instance(1)
    xi0 = np.zeros(model.n_active)
    r = residual_vector(data.X_hat.ravel(), xi0, data, ops, hyper, model)
    nd = data.X_hat.size
    md = ops.n_rows * data.state_dim
    assert np.all(r[:nd] == 0.0)
    assert np.all(r[nd + md:] == 0.0)
    dX = ops.L_dt @ data.X_hat
    expected = 0.5 * np.sum(dX**2) / hyper.sigma_dt**2
    assert 0.5 * r @ r == pytest.approx(expected, rel=1e-12)


def test_truncation_residual_scales_with_stencil_order():
    system = lorenz63()
    truth_norms = {}
    for dt in (0.01, 0.005):
        clean = integrate(system, dt, 5.0, fine_substeps=20)
        spec = system.library
        truth = ground_truth_model(system, spec)
        ops = build_fd_operators(6, clean.n_samples, dt)
        hyper = Hyperparameters(1.0, 1.0, 1.0)
        r = residual_vector(clean.X_clean.ravel(), truth.xi_active, clean, ops, hyper, truth)
        nd = clean.X_clean.size
        md = ops.n_rows * 3
        eta = r[nd:nd + md]
        assert np.all(r[:nd] == 0.0)
        truth_norms[dt] = np.max(np.abs(eta))
    ratio = truth_norms[0.01] / truth_norms[0.005]
    assert 30.0 <= ratio <= 110.0  # about 2**6


def test_residual_reports_nonfinite_indices():
    data, ops, hyper, model, x = small_instance(2)
    bad = x.copy()
    bad[3] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        residual_vector(bad, model.xi_active, data, ops, hyper, model)


def test_jacobian_structure():
    data, ops, hyper, model, x = small_instance(3)
    jac = residual_jacobian(x, model.xi_active, data, ops, hyper, model)
    nt, dim = data.X_hat.shape
    assert jac.shape == (nt * dim + ops.n_rows * dim + model.n_active,
                         nt * dim + model.n_active)
    # eta rows touch at most bandwidth*D state columns
    eta_rows = jac[nt * dim: nt * dim + ops.n_rows * dim, : nt * dim]
    assert np.max(np.diff(eta_rows.tocsr().indptr)) <= ops.bandwidth * dim


def test_jacobian_reduces_to_stencil_for_zero_xi():
    data, ops, hyper, model, x = small_instance(4)
    jac = residual_jacobian(x, np.zeros(model.n_active), data, ops, hyper, model)
    nt, dim = data.X_hat.shape
    eta_x = (jac[nt * dim: nt * dim + ops.n_rows * dim, : nt * dim] * hyper.sigma_dt).toarray()
    dense = np.zeros_like(eta_x)
    ldt = ops.L_dt.toarray()
    for d in range(dim):
        dense[d::dim, d::dim] = ldt
    np.testing.assert_allclose(eta_x, dense, atol=1e-12)


def test_gradient_oracle_50_instances():
    # acceptance criterion: analytic J^T r vs central finite differences
    worst = 0.0
    for seed in range(50):
        data, ops, hyper, model, x = small_instance(seed, nt=14, dim=1 + seed % 3,
                                                    poly=2, order=2)
        xi = model.xi_active
        r = residual_vector(x, xi, data, ops, hyper, model)
        grad = residual_jacobian(x, xi, data, ops, hyper, model).T @ r
        theta = np.concatenate([x, xi])

        def loss(v):
            rr = residual_vector(v[:x.size], v[x.size:], data, ops, hyper, model)
            return 0.5 * float(rr @ rr)

        fd = np.empty_like(theta)
        for i in range(theta.size):
            h = 1e-6 * (1.0 + abs(theta[i]))
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (loss(up) - loss(dn)) / (2.0 * h)
        worst = max(worst, np.linalg.norm(fd - grad) / np.linalg.norm(grad))
    assert worst < 1e-6


def test_noiseless_vanderpol_recovery():
    system = vanderpol()
    clean = integrate(system, 0.01, 10.0)
    data = add_noise(clean, 0.0, seed=0)
    truth = ground_truth_model(system, system.library)
    ops = build_fd_operators(4, data.n_samples, data.dt)
    hyper = Hyperparameters(sigma_x=1e-3, sigma_dt=1e-2, sigma_p=10.0)
    fit = solve_odr(data.X_hat, truth.xi_active * 1.1, data, ops, hyper, truth)
    assert fit.converged
    mu_hat = fit.model.xi[system.library.terms.index((0, 1)), 1]
    assert abs(mu_hat - 0.5) < 5e-3
    assert np.max(np.abs(fit.x_star - clean.X_clean)) < 1e-5
    assert fit.loss_total == pytest.approx(
        fit.loss_data + fit.loss_model + fit.loss_prior, rel=1e-10)


def test_accepted_losses_monotone():
    data, ops, hyper, model, x = small_instance(8)
    fit = solve_odr(x, model.xi_active, data, ops, hyper, model)
    h = np.array(fit.loss_history)
    assert np.all(np.diff(h) <= 0.0)


def test_orthogonality_at_convergence():
    # at the optimum the rescaled data mismatch is orthogonal to the rescaled
    # model slope: the two gradient contributions cancel to high relative
    # precision even though each is large on its own
    data, ops, hyper, model, x = small_instance(9)
    opts = SolverOptions(g_tol=1e-14, x_tol=1e-15, f_tol=1e-15, max_iterations=2000)
    fit = solve_odr(x, model.xi_active, data, ops, hyper, model, opts)
    assert fit.converged
    from odrsindy.odr import OdrWorkspace
    ws = OdrWorkspace(data, ops, hyper, model.spec, model.mask)
    fw = ws.forward(fit.x_star.ravel(), fit.model.xi_active)
    lin = ws.linearize(fw)
    data_term = fw.zeta.ravel() / hyper.sigma_x**2
    model_term = lin.g_x - data_term
    cancel = np.linalg.norm(lin.g_x) / max(np.linalg.norm(data_term),
                                           np.linalg.norm(model_term))
    assert cancel < 1e-5
    assert fit.grad_inf_norm == pytest.approx(np.abs(lin.g_x).max(), rel=1e-6)


def test_huge_sigma_dt_pins_states_to_data():
    data, ops, hyper, model, x = small_instance(10)
    hyper = Hyperparameters(sigma_x=hyper.sigma_x, sigma_dt=1e6, sigma_p=10.0)
    fit = solve_odr(data.X_hat, model.xi_active, data, ops, hyper, model)
    assert np.max(np.abs(fit.x_star - data.X_hat)) < 1e-8


def test_hard_constraint_flag_shrinks_model_residual():
    data, ops, hyper, model, x = small_instance(11, noise=0.0)
    truthy = Model(model.spec, model.mask, model.xi)
    opts = SolverOptions(hard_constraint=True, max_iterations=400)
    fit = solve_odr(data.X_hat, truthy.xi_active, data, ops, hyper, truthy, opts)
    # with sigma_dt forced to 1e-8 the optimizer drives eta far below the
    # soft-constrained value
    r = residual_vector(fit.x_star.ravel(), fit.model.xi_active, data, ops,
                        Hyperparameters(hyper.sigma_x, 1.0, hyper.sigma_p), fit.model)
    nd = data.X_hat.size
    eta = r[nd: nd + ops.n_rows * data.state_dim]
    soft = solve_odr(data.X_hat, truthy.xi_active, data, ops, hyper, truthy)
    r_soft = residual_vector(soft.x_star.ravel(), soft.model.xi_active, data, ops,
                             Hyperparameters(hyper.sigma_x, 1.0, hyper.sigma_p), soft.model)
    assert np.linalg.norm(eta) < np.linalg.norm(r_soft[nd: nd + eta.size])


def test_max_iterations_returns_unconverged_without_raising():
    data, ops, hyper, model, x = small_instance(12)
    fit = solve_odr(x, model.xi_active + 5.0, data, ops, hyper, model,
                    SolverOptions(max_iterations=2))
    assert not fit.converged
    assert fit.termination == "max_iterations"
    assert fit.iterations <= 2


def test_x_only_solver_holds_coefficients():
    data, ops, hyper, model, x = small_instance(13)
    xi = model.xi_active
    fit = solve_x_given_xi(x, xi, data, ops, hyper, model)
    np.testing.assert_array_equal(fit.model.xi_active, xi)
    assert fit.converged


def test_rejects_nonfinite_initial_values():
    data, ops, hyper, model, x = small_instance(14)
    bad = x.copy()
    bad[0] = np.inf
    with pytest.raises(ValueError):
        solve_odr(bad, model.xi_active, data, ops, hyper, model)
