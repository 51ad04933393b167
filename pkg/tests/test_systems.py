import numpy as np
import pytest

from odrsindy.dictionary import enumerate_terms, eval_theta
from odrsindy.systems import (IntegrationError, SystemDef, add_noise, get_system,
                              ground_truth_model, integrate, lorenz63, rossler, vanderpol)


def _decay_system():
    spec = enumerate_terms(1, 1, True)
    xi = np.array([[0.0], [-1.0]])
    return SystemDef("decay", 1, {}, np.array([1.0]), lambda x: -x, spec, xi)


def test_rk4_single_step_against_exponential():
    data = integrate(_decay_system(), dt=0.01, T=0.01, fine_substeps=1)
    assert data.n_samples == 2
    assert data.X_hat[1, 0] == pytest.approx(0.99004983375, abs=1e-10)
    assert abs(data.X_hat[1, 0] - np.exp(-0.01)) < 1e-10


def test_sample_counts():
    data = integrate(lorenz63(), dt=0.01, T=10.0, fine_substeps=2)
    assert data.n_samples == 1001
    data = integrate(rossler(), dt=0.05, T=25.0, fine_substeps=2)
    assert data.n_samples == 501


def test_times_uniform():
    data = integrate(vanderpol(), dt=0.01, T=2.0, fine_substeps=1)
    steps = np.diff(data.times)
    assert np.max(np.abs(steps - data.dt)) < 1e-12 * data.dt


def test_divergence_aborts():
    spec = enumerate_terms(1, 2, True)
    xi = np.zeros((3, 1))
    xi[spec.terms.index((2,)), 0] = 1.0
    blowup = SystemDef("blowup", 1, {}, np.array([5.0]), lambda x: x * x, spec, xi)
    with pytest.raises(IntegrationError):
        integrate(blowup, dt=0.1, T=50.0, fine_substeps=1)


def test_rk4_convergence_rate_on_vanderpol():
    sys_ = vanderpol()
    ref = integrate(sys_, dt=0.1, T=5.0, fine_substeps=16).X_clean
    err = []
    for sub in (1, 2):
        X = integrate(sys_, dt=0.1, T=5.0, fine_substeps=sub).X_clean
        err.append(np.max(np.abs(X - ref)))
    ratio = err[0] / err[1]
    assert 10.0 <= ratio <= 24.0


@pytest.mark.parametrize("factory", [lorenz63, vanderpol, rossler])
def test_xi_true_reproduces_rhs(factory):
    system = factory()
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.standard_normal(system.state_dim)
        theta = eval_theta(system.library, x[None])[0]
        np.testing.assert_allclose(theta @ system.xi_true, system.rhs(x), atol=1e-12)


def test_paper_parameters_and_initial_conditions():
    lor = lorenz63()
    assert lor.params == {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}
    np.testing.assert_array_equal(lor.x0, [-8.0, 8.0, 27.0])
    vdp = vanderpol()
    assert vdp.params == {"mu": 0.5}
    np.testing.assert_array_equal(vdp.x0, [-2.0, 1.0])
    ros = rossler()
    assert ros.params == {"a": 0.2, "b": 0.2, "c": 5.7}
    np.testing.assert_array_equal(ros.x0, [-6.0, 5.0, 0.0])


def test_add_noise_sigma_from_flattened_population_std():
    spec = enumerate_terms(2, 1, True)
    sys_ = _decay_system()
    times = np.arange(2) * 1.0
    from odrsindy.systems import TimeSeriesData
    clean = TimeSeriesData(times=times, X_hat=np.array([[1.0, -1.0], [-1.0, 1.0]]),
                           X_clean=np.array([[1.0, -1.0], [-1.0, 1.0]]), dt=1.0,
                           sigma_x=0.0, noise_level=0.0, seed=None)
    noisy = add_noise(clean, 0.2, seed=0)
    assert noisy.sigma_x == pytest.approx(0.2)


def test_add_noise_zero_level_and_determinism():
    clean = integrate(vanderpol(), dt=0.01, T=1.0)
    zero = add_noise(clean, 0.0, seed=3)
    np.testing.assert_array_equal(zero.X_hat, clean.X_clean)
    a = add_noise(clean, 0.3, seed=42)
    b = add_noise(clean, 0.3, seed=42)
    np.testing.assert_array_equal(a.X_hat, b.X_hat)
    c = add_noise(clean, 0.3, seed=43)
    assert np.any(c.X_hat != a.X_hat)


def test_noise_sample_statistics():
    clean = integrate(lorenz63(), dt=0.01, T=10.0, fine_substeps=2)
    noisy = add_noise(clean, 0.2, seed=1)
    resid = (noisy.X_hat - noisy.X_clean).ravel()
    assert resid.size >= 1000
    assert abs(resid.std() - noisy.sigma_x) < 0.05 * noisy.sigma_x
    assert abs(resid.mean()) < 3 * noisy.sigma_x / np.sqrt(resid.size)


def test_ground_truth_masks():
    lor = ground_truth_model(lorenz63(), enumerate_terms(3, 2, True))
    assert lor.n_active == 7
    names = set(lor.coefficient_names())
    assert names == {"x1 -> dx1/dt", "x2 -> dx1/dt", "x1 -> dx2/dt", "x2 -> dx2/dt",
                     "x1*x3 -> dx2/dt", "x3 -> dx3/dt", "x1*x2 -> dx3/dt"}
    vdp = ground_truth_model(vanderpol(), enumerate_terms(2, 3, True))
    assert vdp.n_active == 4
    assert set(vdp.coefficient_names()) == {"x2 -> dx1/dt", "x1 -> dx2/dt",
                                            "x2 -> dx2/dt", "x1^2*x2 -> dx2/dt"}
    ros = ground_truth_model(rossler(), enumerate_terms(3, 2, True))
    assert ros.n_active == 7
    assert set(ros.coefficient_names()) == {"x2 -> dx1/dt", "x3 -> dx1/dt",
                                            "x1 -> dx2/dt", "x2 -> dx2/dt",
                                            "1 -> dx3/dt", "x3 -> dx3/dt",
                                            "x1*x3 -> dx3/dt"}


def test_ground_truth_requires_covering_library():
    with pytest.raises(ValueError):
        ground_truth_model(vanderpol(), enumerate_terms(2, 2, True))  # misses x1^2*x2


def test_get_system_unknown_name():
    with pytest.raises(ValueError):
        get_system("brusselator")
