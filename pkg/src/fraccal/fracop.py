"""Discrete fractional Laplacian via fractional centered differences.

The weights

    g_k = (-1)^k Gamma(2s + 1) / (Gamma(s - k + 1) Gamma(s + k + 1))

have the discrete symbol ``sum_k g_k exp(i k theta) = (2 - 2 cos theta)^s``,
so ``h^(-2s) g_{|i-j|}`` reproduces the Fourier multiplier ``|xi|^(2s)`` to
second order in ``h``.  The resulting matrix is symmetric Toeplitz with a
positive diagonal and negative off-diagonal entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import gammaln

from .errors import DomainError, GridMismatchError
from .grid import Grid


def _check_order(s: float) -> None:
    if not (0.0 < s < 1.0):
        raise DomainError(f"fractional order s must lie in (0, 1), got {s}")


def centered_weights(s: float, count: int) -> np.ndarray:
    """Return ``g_0 .. g_{count-1}`` using the stable ratio recurrence."""
    _check_order(s)
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    k = np.arange(count - 1, dtype=float)
    ratios = (k - s) / (k + 1.0 + s)
    g0 = math.exp(gammaln(2.0 * s + 1.0) - 2.0 * gammaln(s + 1.0))
    return g0 * np.concatenate(([1.0], np.cumprod(ratios)))


def normalization_constant(n: int, s: float) -> float:
    """Constant ``c_{n,s}`` in the singular-integral form of ``(-Delta)^s``."""
    _check_order(s)
    if int(n) != n or n < 1:
        raise DomainError(f"dimension n must be a positive integer, got {n}")
    # |Gamma(-s)| = Gamma(1 - s) / s for 0 < s < 1
    log_c = (
        gammaln(n / 2.0 + s)
        + s * math.log(4.0)
        - (gammaln(1.0 - s) - math.log(s))
        - (n / 2.0) * math.log(math.pi)
    )
    return math.exp(log_c)


@dataclass(frozen=True, eq=False)
class FracOperator:
    grid: Grid
    s: float
    weights: np.ndarray
    matrix: np.ndarray

    @property
    def interior_block(self) -> np.ndarray:
        i = self.grid.interior_idx
        return self.matrix[np.ix_(i, i)]

    @property
    def interior_exterior_block(self) -> np.ndarray:
        return self.matrix[np.ix_(self.grid.interior_idx, self.grid.exterior_idx)]

    @property
    def exterior_interior_block(self) -> np.ndarray:
        return self.matrix[np.ix_(self.grid.exterior_idx, self.grid.interior_idx)]

    @property
    def exterior_block(self) -> np.ndarray:
        e = self.grid.exterior_idx
        return self.matrix[np.ix_(e, e)]


def assemble(grid: Grid, s: float) -> FracOperator:
    """Dense operator with entries ``g_{|i-j|} / h^(2s)``."""
    weights = centered_weights(s, grid.n_cells)
    matrix = toeplitz(weights) / grid.h ** (2.0 * s)
    weights.setflags(write=False)
    matrix.setflags(write=False)
    return FracOperator(grid=grid, s=float(s), weights=weights, matrix=matrix)


def apply(op: FracOperator, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (op.grid.n_cells,):
        raise GridMismatchError(
            f"operator acts on {op.grid.n_cells} cells, got shape {u.shape}"
        )
    return op.matrix @ u
