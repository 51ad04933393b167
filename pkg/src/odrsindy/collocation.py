"""Banded finite-difference collocation operators for the time derivative.

``L_dt`` applies a central-difference first-derivative stencil at every
interior sample; ``L_I`` selects the matching interior sample.  With N
interior points out of n_samples, both operators are N x n_samples banded
matrices and ``L_dt @ X ~ L_I @ f(X)`` discretizes dX/dt = f(X).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = ["CollocationOperators", "build_fd_operators", "central_difference_weights"]

_SUPPORTED_ORDERS = (2, 4, 6, 8)


def central_difference_weights(order: int) -> np.ndarray:
    """First-derivative central-difference weights for unit spacing.

    Solves the Vandermonde moment conditions on the symmetric stencil
    -order/2 .. order/2, which reproduces the classical coefficients
    (e.g. order 4: [1/12, -2/3, 0, 2/3, -1/12]).
    """
    half = order // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    vand = np.vander(offsets, increasing=True).T  # vand[p, s] = offsets[s]**p
    rhs = np.zeros(order + 1)
    rhs[1] = 1.0
    return np.linalg.solve(vand, rhs)


@dataclass(frozen=True, eq=False)
class CollocationOperators:
    """Pair of banded operators discretizing the derivative relation.

    ``stencil`` holds the L_dt row weights already divided by dt; each L_dt
    row has order+1 entries summing to zero, each L_I row a single 1 at the
    stencil center (interior-only collocation, n_rows = n_samples - order).
    """

    order: int
    dt: float
    n_samples: int
    n_rows: int
    stencil: np.ndarray
    L_dt: sp.csr_matrix
    L_I: sp.csr_matrix

    @property
    def bandwidth(self) -> int:
        return self.order + 1

    @property
    def half(self) -> int:
        return self.order // 2

    @property
    def interior(self) -> slice:
        """Slice of sample indices at which rows collocate."""
        return slice(self.half, self.half + self.n_rows)

    def apply(self, X):
        """Return ``(L_dt @ X, L_I @ X)`` for samples X of shape (n_samples, D)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] != self.n_samples:
            raise ValueError(f"expected ({self.n_samples}, D) samples, got shape {X.shape}")
        return self.L_dt @ X, self.L_I @ X


def build_fd_operators(order: int, n_samples: int, dt: float) -> CollocationOperators:
    """Build central finite-difference collocation operators.

    Parameters
    ----------
    order : int
        Accuracy order of the stencil; one of 2, 4, 6, 8.
    n_samples : int
        Number of time samples (must exceed ``order``).
    dt : float
        Uniform sampling interval (> 0).
    """
    if order not in _SUPPORTED_ORDERS:
        raise ValueError(f"order must be one of {_SUPPORTED_ORDERS}, got {order}")
    if n_samples <= order:
        raise ValueError(f"need more than {order} samples, got {n_samples}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    weights = central_difference_weights(order) / dt
    n_rows = n_samples - order
    width = order + 1
    # build CSR directly so the stencil's exact-zero center weight stays a
    # stored entry and every row carries the full bandwidth
    indptr = np.arange(n_rows + 1) * width
    indices = (np.arange(n_rows)[:, None] + np.arange(width)[None, :]).ravel()
    data = np.tile(weights, n_rows)
    L_dt = sp.csr_matrix((data, indices, indptr), shape=(n_rows, n_samples))
    L_I = sp.csr_matrix(
        (np.ones(n_rows), np.arange(n_rows) + order // 2, np.arange(n_rows + 1)),
        shape=(n_rows, n_samples),
    )
    return CollocationOperators(
        order=order,
        dt=float(dt),
        n_samples=n_samples,
        n_rows=n_rows,
        stencil=weights,
        L_dt=L_dt,
        L_I=L_I,
    )
