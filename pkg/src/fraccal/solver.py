"""Exterior-value solves, the semilinear fixed point and the DN map.

Index blocks follow the interior (I) / exterior (E) split of the grid:
``L_II`` is symmetric positive definite with nonpositive off-diagonal entries
(a Stieltjes matrix), hence ``L_II^{-1} >= 0`` entrywise.  That is the whole
discrete maximum principle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DomainError, NoConvergenceError, SingularSystemError
from .fracop import FracOperator

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 200
# increments this large mean the iterate left any contraction ball
_BLOWUP = 1e100


@dataclass(frozen=True, eq=False)
class HarmonicLift:
    """Factorized ``L_II`` plus the s-harmonic extension and linear DN blocks.

    ``lift_matrix`` maps exterior data ``g`` to the interior values of the
    s-harmonic extension ``v_g``; ``dn_matrix`` maps ``g`` to
    ``(L v_g)`` on the exterior cells.
    """

    op: FracOperator
    lift_matrix: np.ndarray
    dn_matrix: np.ndarray
    _factor: tuple = field(repr=False)

    @property
    def grid(self):
        return self.op.grid

    def lift(self, g) -> np.ndarray:
        return self.lift_matrix @ self.grid.check_exterior(g)

    def extend(self, g) -> np.ndarray:
        """Full grid function equal to ``g`` outside and ``v_g`` inside."""
        g = self.grid.check_exterior(g)
        return self.grid.embed(interior=self.lift_matrix @ g, exterior=g)

    def solve_interior(self, rhs) -> np.ndarray:
        return cho_solve(self._factor, rhs)


def build_lift(op: FracOperator) -> HarmonicLift:
    try:
        factor = cho_factor(op.interior_block, lower=True)
    except LinAlgError as exc:
        raise SingularSystemError(
            "interior block is not positive definite; operator assembly is broken"
        ) from exc
    lift_matrix = -cho_solve(factor, op.interior_exterior_block)
    dn_matrix = op.exterior_interior_block @ lift_matrix + op.exterior_block
    lift_matrix.setflags(write=False)
    dn_matrix.setflags(write=False)
    return HarmonicLift(op=op, lift_matrix=lift_matrix, dn_matrix=dn_matrix, _factor=factor)


def solve_source(lift: HarmonicLift, F) -> np.ndarray:
    """Solve ``L v = F`` in the interior with ``v = 0`` on the exterior.

    ``F`` is a full grid function; its exterior entries are ignored.
    """
    grid = lift.grid
    F = grid.check_full(F)
    return grid.embed(interior=lift.solve_interior(F[grid.interior_idx]))


@dataclass
class SemilinearSolution:
    u: np.ndarray
    iterations: int
    residual: float
    converged: bool
    increments: list = field(default_factory=list)

    @property
    def contraction_ratios(self) -> np.ndarray:
        inc = np.asarray(self.increments, dtype=float)
        if inc.size < 2:
            return np.empty(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return inc[1:] / inc[:-1]


def solve_semilinear(
    lift: HarmonicLift,
    q,
    f,
    m: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SemilinearSolution:
    """Solve ``L u + q u^m = 0`` in the interior with ``u = f`` outside.

    Picard iteration ``v <- -L_II^{-1} (q (u0 + v)^m)`` around the
    s-harmonic extension ``u0`` of ``f``; the iteration stops once the
    sup-norm of the increment is at most ``tol``.  Raises
    :class:`NoConvergenceError` (carrying the last iterate) when that does not
    happen within ``max_iter`` sweeps.
    """
    grid = lift.grid
    q = grid.check_interior(getattr(q, "values", q))
    f = grid.check_exterior(f)
    if int(m) != m or m < 2:
        raise DomainError(f"exponent m must be an integer >= 2, got {m}")
    u0 = lift.lift_matrix @ f
    v = np.zeros_like(u0)
    increments = []
    converged = False
    for it in range(1, max_iter + 1):
        v_new = -lift.solve_interior(q * (u0 + v) ** m)
        inc = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        v = v_new
        increments.append(inc)
        if inc <= tol:
            converged = True
            break
        if not math.isfinite(inc) or inc > _BLOWUP:
            break
    solution = SemilinearSolution(
        u=grid.embed(interior=u0 + v, exterior=f),
        iterations=it,
        residual=increments[-1],
        converged=converged,
        increments=increments,
    )
    if not converged:
        raise NoConvergenceError(
            f"fixed-point iteration did not reach tol={tol:g} in {it} iterations "
            f"(last increment {increments[-1]:.3e}); exterior data too large?",
            solution=solution,
        )
    return solution


def dn_map(lift, q, f, m, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> np.ndarray:
    """Exterior values of ``L u_f`` for the semilinear solution ``u_f``."""
    sol = solve_semilinear(lift, q, f, m, tol=tol, max_iter=max_iter)
    return lift.op.matrix[lift.grid.exterior_idx] @ sol.u


def default_fd_step(k: int, g) -> float:
    scale = float(np.max(np.abs(g))) if np.size(g) else 1.0
    return np.finfo(float).eps ** (1.0 / (k + 2)) / max(scale, np.finfo(float).tiny)


def fd_stencil(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (in units of the step) and weights of the k-th central difference.

    Integer nodes for even ``k``, half-integer nodes for odd ``k``; both are
    second-order accurate.
    """
    j = np.arange(k + 1)
    nodes = k / 2.0 - j
    weights = np.array([(-1.0) ** i * math.comb(k, i) for i in j])
    return nodes, weights


def fd_derivative(
    lift: HarmonicLift,
    q,
    g,
    k: int,
    m: int,
    eps: float | None = None,
    tol: float = 0.0,
    max_iter: int = DEFAULT_MAX_ITER,
    check: bool = True,
) -> np.ndarray:
    """k-th derivative of ``t -> dn_map(t g)`` at ``t = 0`` by central differences.

    Inner solves iterate to round-off (``tol=0`` stops on an exactly
    repeated iterate or when increments stop shrinking).  With ``check`` the
    estimate is repeated at ``2 eps``; a ``RuntimeWarning`` is issued when the
    finer step gives a norm more than 10% *larger* than the coarser one while
    above the round-off floor, the signature of cancellation rather than
    truncation error.
    """
    if k < 1 or k > m + 1:
        raise DomainError(f"derivative order must satisfy 1 <= k <= m+1, got k={k}")
    g = lift.grid.check_exterior(g)
    if eps is None:
        eps = default_fd_step(k, g)
    estimate, floor = _central_difference(lift, q, g, k, m, eps, tol, max_iter)
    if check:
        coarse, floor2 = _central_difference(lift, q, g, k, m, 2.0 * eps, tol, max_iter)
        n1, n2 = np.linalg.norm(estimate), np.linalg.norm(coarse)
        if n1 > 10.0 * max(floor, floor2) and n1 > 1.1 * n2:
            warnings.warn(
                f"order-{k} difference unstable under eps -> 2 eps "
                f"({n1:.3e} vs {n2:.3e}); step {eps:.2e} may be too small",
                RuntimeWarning,
                stacklevel=2,
            )
    return estimate


def _central_difference(lift, q, g, k, m, eps, tol, max_iter):
    # dn_map(t g) = t * (dn_matrix @ g) + L_EI @ v(t g).  The linear part is
    # differenced in closed form so its rounding never reaches the
    # high-order quotient; the nonlinear correction v is O(t^m).
    nodes, weights = fd_stencil(k)
    grid = lift.grid
    coupling = lift.op.exterior_interior_block
    linear = lift.dn_matrix @ g
    acc = np.zeros(grid.n_exterior)
    scale = 0.0
    for node, w in zip(nodes, weights):
        v = _correction_to_roundoff(lift, q, node * eps * g, m, tol, max_iter)
        values = coupling @ v
        acc += w * values
        scale = max(scale, float(np.max(np.abs(values))))
    acc += float(np.dot(weights, nodes)) * eps * linear
    acc /= eps**k
    floor = np.finfo(float).eps * scale * 2.0**k / eps**k
    return acc, floor * math.sqrt(acc.size)


def _correction_to_roundoff(lift, q, f, m, tol, max_iter):
    """Interior fixed point v of ``v = -L_II^{-1} q (u0 + v)^m``."""
    q = lift.grid.check_interior(getattr(q, "values", q))
    u0 = lift.lift_matrix @ f
    v = np.zeros_like(u0)
    last = math.inf
    for _ in range(max_iter):
        v_new = -lift.solve_interior(q * (u0 + v) ** m)
        inc = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        v = v_new
        if inc <= tol or inc == 0.0:
            return v
        # round-off plateau: increments stopped shrinking at machine level
        if inc >= last and inc <= 64.0 * np.finfo(float).eps * max(np.max(np.abs(v)), 1e-300):
            return v
        last = inc
    raise NoConvergenceError(
        f"fixed-point iteration stalled at increment {inc:.3e} during differencing"
    )
