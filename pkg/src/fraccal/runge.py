"""Regularized Runge approximation and localized potentials.

Interior values of s-harmonic extensions are dense, so an indicator of a
target block can be approximated by ``lift(g)`` for suitable exterior data.
On a fixed grid the lift matrix is severely ill-conditioned (its singular
values decay geometrically), so the least-squares fit is Tikhonov
regularized and solved through an SVD of the lift restricted to the allowed
exterior cells, which avoids squaring the condition number.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateApproximantError, DomainError, SingularSystemError
from .grid import lp_norm
from .solver import HarmonicLift

DEFAULT_LAMBDA0 = 1e-2
DEFAULT_RHO = 0.1
DEFAULT_LEVELS = 5
DIVISION_GUARD = 1e-14
# relative singular-value cutoff used to decide rank at reg_lambda = 0
_RANK_RTOL = 1e-13

_svd_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


@dataclass(frozen=True, eq=False)
class ApproximationProblem:
    lift: HarmonicLift
    target: np.ndarray
    reg_lambda: float = 0.0
    exterior_subspace: tuple | None = None

    def __post_init__(self):
        target = self.lift.grid.check_interior(self.target)
        if not np.all(np.isfinite(target)):
            raise DomainError("approximation target must be finite")
        if not (self.reg_lambda >= 0.0 and math.isfinite(self.reg_lambda)):
            raise DomainError(f"reg_lambda must be finite and >= 0, got {self.reg_lambda}")
        object.__setattr__(self, "target", target)
        if self.exterior_subspace is not None:
            cells = tuple(sorted(set(int(c) for c in self.exterior_subspace)))
            self.lift.grid.exterior_positions(cells)  # raises IndexError
            object.__setattr__(self, "exterior_subspace", cells)


@dataclass(frozen=True)
class Approximation:
    g: np.ndarray
    v: np.ndarray
    residual: float  # discrete squared L^2 misfit over the interior


def _restricted_svd(lift: HarmonicLift, subspace):
    grid = lift.grid
    cols = (
        np.arange(grid.n_exterior)
        if subspace is None
        else grid.exterior_positions(subspace)
    )
    per_lift = _svd_cache.setdefault(lift, {})
    key = tuple(cols.tolist())
    if key not in per_lift:
        # quadrature weights: h on both the misfit and the penalty
        u, sig, vt = np.linalg.svd(lift.lift_matrix[:, cols], full_matrices=False)
        per_lift[key] = (cols, u, sig, vt)
    return per_lift[key]


def approximate(problem: ApproximationProblem) -> Approximation:
    """Minimize ``|lift(g) - target|^2 + reg_lambda |g|^2`` in discrete L^2.

    ``g`` is supported on ``exterior_subspace`` (all exterior cells when
    ``None``).  Both norms carry the same cell width, so it cancels from the
    minimizer.  At ``reg_lambda = 0`` a numerically rank-deficient lift raises
    :class:`SingularSystemError`.
    """
    lift = problem.lift
    grid = lift.grid
    cols, u, sig, vt = _restricted_svd(lift, problem.exterior_subspace)
    lam = problem.reg_lambda
    if lam == 0.0:
        if sig.size < cols.size or sig.size == 0 or sig[-1] <= _RANK_RTOL * sig[0]:
            raise SingularSystemError(
                "unregularized fit is rank deficient; use reg_lambda > 0"
            )
        filt = 1.0 / sig
    else:
        filt = sig / (sig**2 + lam)
    coeffs = filt * (u.T @ problem.target)
    g = np.zeros(grid.n_exterior)
    g[cols] = vt.T @ coeffs
    v = lift.lift_matrix @ g
    residual = grid.h * float(np.sum((v - problem.target) ** 2))
    return Approximation(g=g, v=v, residual=residual)


@dataclass(frozen=True)
class LocalizedLevel:
    reg_lambda: float
    g: np.ndarray
    g_raw: np.ndarray
    raw_on: float  # ||v_raw||_{L^a(M)}
    raw_off: float  # ||v_raw||_{L^a(interior \ M)}
    norm_on_M: float  # ||v||^a_{L^a(M)} for the normalized datum
    norm_off_M: float  # ||v||^a_{L^a(interior \ M)}
    residual: float

    @property
    def ratio(self) -> float:
        return self.norm_on_M / self.norm_off_M


@dataclass(frozen=True)
class LocalizedPotentialSequence:
    M: tuple
    a: float
    entries: list

    @property
    def ratios(self) -> np.ndarray:
        return np.array([e.ratio for e in self.entries])


def block_target(lift: HarmonicLift, M, a: float) -> np.ndarray:
    """``(1/|M|)^(1/a)`` on the interior cells of ``M``, zero elsewhere."""
    grid = lift.grid
    pos = grid.interior_positions(M)
    target = np.zeros(grid.n_interior)
    target[pos] = (1.0 / (grid.h * pos.size)) ** (1.0 / a)
    return target


def localized_potentials(
    lift: HarmonicLift,
    M,
    a: float,
    levels: int = DEFAULT_LEVELS,
    lambda0: float = DEFAULT_LAMBDA0,
    rho: float = DEFAULT_RHO,
    exterior_subspace=None,
) -> LocalizedPotentialSequence:
    """Exterior data whose lifts concentrate L^a mass on ``M``.

    Level ``k`` fits the normalized indicator with ``reg_lambda = lambda0 * rho**k``
    and rescales the fit so that ``||v||^a`` off ``M`` equals
    ``||v_raw||_off^(a-1)``, i.e. ``g = g_raw / ||v_raw||_off^(1/a)``.
    """
    grid = lift.grid
    M = tuple(sorted(set(int(c) for c in M)))
    if not M:
        raise DomainError("target set M is empty")
    pos = grid.interior_positions(M)
    if pos.size >= grid.n_interior:
        raise DomainError("target set M must be a strict subset of the interior")
    if not a > 1.0:
        raise DomainError(f"norm exponent a must exceed 1, got {a}")
    if int(levels) != levels or levels < 1:
        raise DomainError(f"levels must be a positive integer, got {levels}")
    if not (lambda0 > 0 and 0 < rho < 1):
        raise DomainError("schedule needs lambda0 > 0 and 0 < rho < 1")
    on = np.zeros(grid.n_interior, dtype=bool)
    on[pos] = True
    target = block_target(lift, M, a)
    entries = []
    for k in range(int(levels)):
        lam = lambda0 * rho**k
        fit = approximate(ApproximationProblem(lift, target, lam, exterior_subspace))
        raw_on = lp_norm(grid, fit.v[on], a)
        raw_off = lp_norm(grid, fit.v[~on], a)
        if raw_off <= DIVISION_GUARD:
            raise DegenerateApproximantError(
                f"approximant vanishes off the target at level {k}; cannot normalize"
            )
        g = fit.g / raw_off ** (1.0 / a)
        entries.append(
            LocalizedLevel(
                reg_lambda=lam,
                g=g,
                g_raw=fit.g,
                raw_on=raw_on,
                raw_off=raw_off,
                norm_on_M=raw_on**a / raw_off,
                norm_off_M=raw_off ** (a - 1.0),
                residual=fit.residual,
            )
        )
    return LocalizedPotentialSequence(M=M, a=float(a), entries=entries)
