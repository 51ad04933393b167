"""Polynomial candidate-function libraries and their analytic state derivatives.

A library is an ordered list of multivariate monomials ``x1^e1 * ... * xD^eD``
with total degree at most ``poly_order``.  Terms are enumerated in ascending
total degree and, within a degree, in combinations-with-replacement order of
the state indices (``x1^2, x1*x2, x1*x3, x2^2, x2*x3, x3^2`` for D = 3), so
the column layout is deterministic across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

__all__ = [
    "LibrarySpec",
    "enumerate_terms",
    "monomial_name",
    "eval_theta",
    "eval_theta_jacobian",
    "eval_theta_hessian",
    "theta_jacobian_rows",
    "theta_jacobian_rows_t",
    "theta_hessian_rows",
]


@dataclass(frozen=True, eq=False)
class LibrarySpec:
    """Ordered monomial library over ``state_dim`` states.

    ``terms[m]`` is the exponent vector of the m-th candidate function; the
    number of candidates is ``n_terms`` (C(D+p, p) with the constant term,
    one less without it).
    """

    state_dim: int
    poly_order: int
    include_constant: bool
    terms: tuple[tuple[int, ...], ...]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def term_names(self) -> list[str]:
        return [monomial_name(e) for e in self.terms]


def monomial_name(exponents) -> str:
    """Human-readable name such as ``"1"``, ``"x2"`` or ``"x1^2*x3"``."""
    parts = []
    for j, e in enumerate(exponents):
        if e == 0:
            continue
        parts.append(f"x{j + 1}" if e == 1 else f"x{j + 1}^{e}")
    return "*".join(parts) if parts else "1"


def enumerate_terms(state_dim: int, poly_order: int, include_constant: bool = True) -> LibrarySpec:
    """Enumerate all monomials of total degree <= poly_order.

    Parameters
    ----------
    state_dim : int
        Number of states D (>= 1).
    poly_order : int
        Maximum total degree p (>= 1).
    include_constant : bool
        Whether the degree-0 term "1" is part of the library.
    """
    if state_dim < 1:
        raise ValueError(f"state_dim must be >= 1, got {state_dim}")
    if poly_order < 1:
        raise ValueError(f"poly_order must be >= 1, got {poly_order}")
    terms = []
    first_degree = 0 if include_constant else 1
    for degree in range(first_degree, poly_order + 1):
        for combo in combinations_with_replacement(range(state_dim), degree):
            exps = [0] * state_dim
            for j in combo:
                exps[j] += 1
            terms.append(tuple(exps))
    return LibrarySpec(state_dim, poly_order, include_constant, tuple(terms))


def _power_table(X: np.ndarray, max_order: int) -> np.ndarray:
    """pow_[k, :, j] = X[:, j]**k with 0**0 == 1, built by repeated products."""
    n, d = X.shape
    pow_ = np.empty((max_order + 1, n, d))
    pow_[0] = 1.0
    for k in range(1, max_order + 1):
        pow_[k] = pow_[k - 1] * X
    return pow_


def _check_states(spec: LibrarySpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.state_dim:
        raise ValueError(
            f"states must have shape (n, {spec.state_dim}), got {X.shape}"
        )
    return X


def eval_theta(spec: LibrarySpec, X) -> np.ndarray:
    """Evaluate the library row-wise: entry (k, m) = prod_j X[k, j]**e_mj.

    Row k of the result depends only on row k of X, so evaluating on any
    subset of rows gives bit-identical values to slicing the full matrix.
    """
    X = _check_states(spec, X)
    pow_ = _power_table(X, spec.poly_order)
    theta = np.ones((X.shape[0], spec.n_terms))
    for m, exps in enumerate(spec.terms):
        col = theta[:, m]
        for j, e in enumerate(exps):
            if e:
                col *= pow_[e, :, j]
    return theta


def theta_jacobian_rows_t(spec: LibrarySpec, X) -> np.ndarray:
    """First derivatives of every library term, batched over rows.

    Returns an (n, D, M) array with entry (k, e, m) = d(term m)/d x_e at X[k];
    the layout matches how the solver contracts it against the coefficients.
    """
    X = _check_states(spec, X)
    n = X.shape[0]
    pow_ = _power_table(X, spec.poly_order)
    jac = np.zeros((n, spec.state_dim, spec.n_terms))
    for m, exps in enumerate(spec.terms):
        for e_dim, k in enumerate(exps):
            if k == 0:
                continue
            g = float(k) * pow_[k - 1, :, e_dim]
            for j, kj in enumerate(exps):
                if j != e_dim and kj:
                    g = g * pow_[kj, :, j]
            jac[:, e_dim, m] = g
    return jac


def theta_jacobian_rows(spec: LibrarySpec, X) -> np.ndarray:
    """First derivatives of every library term as an (n, M, D) array."""
    return theta_jacobian_rows_t(spec, X).transpose(0, 2, 1)


def theta_hessian_rows(spec: LibrarySpec, X) -> np.ndarray:
    """Second derivatives of every library term, batched over rows.

    Returns an (n, M, D, D) array, symmetric in the last two axes.
    """
    X = _check_states(spec, X)
    n = X.shape[0]
    pow_ = _power_table(X, spec.poly_order)
    hess = np.zeros((n, spec.n_terms, spec.state_dim, spec.state_dim))

    def _rest(exps, skip):
        g = None
        for j, kj in enumerate(exps):
            if j in skip or not kj:
                continue
            g = pow_[kj, :, j] if g is None else g * pow_[kj, :, j]
        return g

    for m, exps in enumerate(spec.terms):
        for e in range(spec.state_dim):
            ke = exps[e]
            if ke >= 2:
                g = float(ke * (ke - 1)) * pow_[ke - 2, :, e]
                rest = _rest(exps, (e,))
                hess[:, m, e, e] = g if rest is None else g * rest
            for f in range(e + 1, spec.state_dim):
                kf = exps[f]
                if ke >= 1 and kf >= 1:
                    g = float(ke * kf) * pow_[ke - 1, :, e] * pow_[kf - 1, :, f]
                    rest = _rest(exps, (e, f))
                    val = g if rest is None else g * rest
                    hess[:, m, e, f] = val
                    hess[:, m, f, e] = val
    return hess


def eval_theta_jacobian(spec: LibrarySpec, x) -> np.ndarray:
    """Gradient of every term at a single state: (M, D) array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.state_dim:
        raise ValueError(f"state must be a length-{spec.state_dim} vector, got shape {x.shape}")
    return theta_jacobian_rows(spec, x[None, :])[0]


def eval_theta_hessian(spec: LibrarySpec, x) -> np.ndarray:
    """Hessian of every term at a single state: (M, D, D) array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.state_dim:
        raise ValueError(f"state must be a length-{spec.state_dim} vector, got shape {x.shape}")
    return theta_hessian_rows(spec, x[None, :])[0]
