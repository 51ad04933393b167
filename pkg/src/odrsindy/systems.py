"""Benchmark dynamical systems, trajectory generation and measurement noise.

Ground-truth trajectories come from classical 4th-order Runge-Kutta run on a
refined internal step, so the generation truncation error sits far below the
assimilation finite-difference error.  Noise levels follow the convention
sigma_x = noise_level * population-std of the flattened noiseless data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dictionary import LibrarySpec, enumerate_terms, monomial_name
from .odr import Model

__all__ = [
    "IntegrationError",
    "SystemDef",
    "TimeSeriesData",
    "lorenz63",
    "vanderpol",
    "rossler",
    "SYSTEMS",
    "get_system",
    "integrate",
    "add_noise",
    "ground_truth_model",
]


class IntegrationError(RuntimeError):
    """Trajectory integration produced a non-finite state."""


@dataclass(frozen=True, eq=False)
class SystemDef:
    """Right-hand side, parameters and ground-truth coefficients of a benchmark system."""

    name: str
    state_dim: int
    params: dict
    x0: np.ndarray
    rhs: Callable[[np.ndarray], np.ndarray]
    library: LibrarySpec
    xi_true: np.ndarray  # (M, D) in `library` term ordering


@dataclass(frozen=True, eq=False)
class TimeSeriesData:
    """Uniformly sampled observations, optionally with the noiseless truth attached."""

    times: np.ndarray
    X_hat: np.ndarray
    X_clean: np.ndarray | None
    dt: float
    sigma_x: float
    noise_level: float
    seed: int | None

    @property
    def n_samples(self) -> int:
        return self.X_hat.shape[0]

    @property
    def state_dim(self) -> int:
        return self.X_hat.shape[1]


def _xi_from_terms(spec: LibrarySpec, columns) -> np.ndarray:
    xi = np.zeros((spec.n_terms, len(columns)))
    index = {t: i for i, t in enumerate(spec.terms)}
    for d, col in enumerate(columns):
        for exps, value in col.items():
            xi[index[exps], d] = value
    return xi


def lorenz63(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0,
             x0=(-8.0, 8.0, 27.0)) -> SystemDef:
    """Standard Lorenz63: dx = sigma*(y-x), dy = x*(rho-z) - y, dz = x*y - beta*z."""
    spec = enumerate_terms(3, 2, include_constant=True)

    def rhs(s):
        x, y, z = s
        return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])

    xi = _xi_from_terms(spec, [
        {(1, 0, 0): -sigma, (0, 1, 0): sigma},
        {(1, 0, 0): rho, (0, 1, 0): -1.0, (1, 0, 1): -1.0},
        {(1, 1, 0): 1.0, (0, 0, 1): -beta},
    ])
    return SystemDef("lorenz63", 3, {"sigma": sigma, "rho": rho, "beta": beta},
                     np.asarray(x0, dtype=float), rhs, spec, xi)


def vanderpol(mu: float = 0.5, x0=(-2.0, 1.0)) -> SystemDef:
    """Van der Pol oscillator: dx = y, dy = mu*(1 - x^2)*y - x."""
    spec = enumerate_terms(2, 3, include_constant=True)

    def rhs(s):
        x, y = s
        return np.array([y, mu * (1.0 - x * x) * y - x])

    xi = _xi_from_terms(spec, [
        {(0, 1): 1.0},
        {(1, 0): -1.0, (0, 1): mu, (2, 1): -mu},
    ])
    return SystemDef("vanderpol", 2, {"mu": mu}, np.asarray(x0, dtype=float), rhs, spec, xi)


def rossler(a: float = 0.2, b: float = 0.2, c: float = 5.7,
            x0=(-6.0, 5.0, 0.0)) -> SystemDef:
    """Roessler system: dx = -y - z, dy = x + a*y, dz = b + z*(x - c)."""
    spec = enumerate_terms(3, 2, include_constant=True)

    def rhs(s):
        x, y, z = s
        return np.array([-y - z, x + a * y, b + z * (x - c)])

    xi = _xi_from_terms(spec, [
        {(0, 1, 0): -1.0, (0, 0, 1): -1.0},
        {(1, 0, 0): 1.0, (0, 1, 0): a},
        {(0, 0, 0): b, (0, 0, 1): -c, (1, 0, 1): 1.0},
    ])
    return SystemDef("rossler", 3, {"a": a, "b": b, "c": c},
                     np.asarray(x0, dtype=float), rhs, spec, xi)


SYSTEMS = {"lorenz63": lorenz63, "vanderpol": vanderpol, "rossler": rossler}


def get_system(name: str, **params) -> SystemDef:
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
    return factory(**params)


def _rk4_step(rhs, x, h):
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(system: SystemDef, dt: float, T: float, fine_substeps: int = 10) -> TimeSeriesData:
    """Generate a noiseless trajectory sampled at dt over [0, T].

    Classical RK4 marches at internal step dt/fine_substeps and is subsampled
    to dt, giving floor(T/dt) + 1 samples.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T < dt:
        raise ValueError(f"T must be at least dt, got T={T}, dt={dt}")
    if fine_substeps < 1:
        raise ValueError(f"fine_substeps must be >= 1, got {fine_substeps}")
    n_steps = int(np.floor(T / dt + 1e-9))
    h = dt / fine_substeps
    X = np.empty((n_steps + 1, system.state_dim))
    x = np.array(system.x0, dtype=float)
    X[0] = x
    for i in range(1, n_steps + 1):
        for _ in range(fine_substeps):
            x = _rk4_step(system.rhs, x, h)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"{system.name}: state diverged near t = {i * dt:.6g}")
        X[i] = x
    times = np.arange(n_steps + 1) * dt
    return TimeSeriesData(times=times, X_hat=X.copy(), X_clean=X, dt=float(dt),
                          sigma_x=0.0, noise_level=0.0, seed=None)


def add_noise(clean: TimeSeriesData, noise_level: float, seed: int) -> TimeSeriesData:
    """Contaminate a noiseless trajectory with i.i.d. Gaussian noise.

    The noise std is noise_level times the population standard deviation of
    the flattened clean data.  Sampling uses numpy's seeded PCG64 generator,
    so identical seeds give bit-identical observations.
    """
    if clean.X_clean is None:
        raise ValueError("add_noise requires data with the noiseless trajectory attached")
    if noise_level < 0:
        raise ValueError(f"noise_level must be >= 0, got {noise_level}")
    sigma = float(noise_level) * float(np.std(clean.X_clean))
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=clean.X_clean.shape) if sigma > 0 else 0.0
    return TimeSeriesData(
        times=clean.times,
        X_hat=clean.X_clean + noise,
        X_clean=clean.X_clean,
        dt=clean.dt,
        sigma_x=sigma,
        noise_level=float(noise_level),
        seed=int(seed),
    )


def ground_truth_model(system: SystemDef, spec: LibrarySpec) -> Model:
    """Ground-truth coefficients of a system expressed in a given library.

    Fails if the library misses any term the system actually uses.
    """
    if spec.state_dim != system.state_dim:
        raise ValueError(f"library has {spec.state_dim} states, system has {system.state_dim}")
    index = {t: i for i, t in enumerate(spec.terms)}
    xi = np.zeros((spec.n_terms, system.state_dim))
    for m, d in zip(*np.nonzero(system.xi_true)):
        exps = system.library.terms[m]
        if exps not in index:
            raise ValueError(
                f"library lacks term {monomial_name(exps)} required by {system.name}"
            )
        xi[index[exps], d] = system.xi_true[m, d]
    return Model(spec, xi != 0.0, xi)
