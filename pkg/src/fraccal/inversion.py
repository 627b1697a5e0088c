"""Inverse-problem algorithms built on the m-form comparisons.

All tests reduce to signed integrals of densities against the nonnegative
battery kernel ``K[p, i] = h * v_g^m * v_h`` (see
:meth:`fraccal.forms.TestBattery.kernel`), so the candidate-set loops below
operate on columns of ``K`` rather than re-evaluating forms.

Finite batteries make every certificate one-sided: a detected violation is a
proof for the discrete problem, while acceptance only means no battery pair
found a violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError
from .forms import DEFAULT_SLACK, MFormEvaluator, Ordering, Potential, TestBattery
from .solver import HarmonicLift

GUARD_DENOMINATOR = 1e-13
GUARD_NUMERATOR = 1e-10


# Shared helpers


def _numerator(lift: HarmonicLift, diff, battery: TestBattery, m: int):
    """Values and magnitudes of the difference form over the battery.

    ``diff`` is either a density on interior cells (``q - q0``) or a pair of
    evaluators ``(eval_q, eval_q0)``; both routes agree by the integral
    identity.
    """
    if battery.m != m:
        raise DomainError(f"battery built for m={battery.m}, expected m={m}")
    battery.check_parity()
    if isinstance(diff, tuple) and len(diff) == 2 and hasattr(diff[0], "values"):
        e1, e0 = diff
        return e1.values(battery) - e0.values(battery), e1.magnitudes(battery) + e0.magnitudes(battery)
    ev = MFormEvaluator(lift, diff, m, float(math.factorial(m)))
    return ev.values(battery), ev.magnitudes(battery)


def _pair_ratios(num, mag, den, slack):
    """Per-pair ratio |num| / den with the division-noise policy applied."""
    absnum = np.abs(num)
    negligible = absnum <= slack * mag
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, absnum / np.where(den > 0, den, 1.0), np.inf)
    ratio = np.where((den < GUARD_DENOMINATOR) & (absnum > GUARD_NUMERATOR), np.inf, ratio)
    return np.where(negligible, 0.0, ratio)


def _within(ratio, alpha_max):
    return ratio <= alpha_max * (1.0 + 1e-9) if math.isfinite(alpha_max) else np.isfinite(ratio)


def interval_family(cells) -> list[tuple]:
    """All contiguous runs of the given (sorted) cells, plus the empty set."""
    cells = sorted(int(c) for c in cells)
    family = [()]
    for i in range(len(cells)):
        for j in range(i, len(cells)):
            family.append(tuple(cells[i : j + 1]))
    return family


# Inclusion detection


@dataclass(frozen=True)
class InclusionVerdict:
    candidate: tuple
    alpha_star: float
    admissible: bool
    witnesses: list
    battery_size: int
    battery_labels: dict = field(default_factory=dict)


def inclusion_test(
    lift: HarmonicLift,
    dn_diff_density,
    C,
    battery: TestBattery,
    m: int,
    alpha_max: float = math.inf,
    slack: float = DEFAULT_SLACK,
) -> InclusionVerdict:
    """Is ``|form(q - q0)| <= alpha * m! * T_C`` on every battery pair for some alpha?

    ``alpha_star`` is the smallest such alpha over the battery (``inf`` when a
    pair has a vanishing ``T_C`` but a nonzero difference).  With the default
    ``alpha_max = inf`` the candidate is admissible iff ``alpha_star`` is
    finite; a finite ``alpha_max`` turns this into a threshold test.
    Witnesses are the battery-pair indices whose ratio exceeds ``alpha_max``.
    """
    grid = lift.grid
    pos = grid.interior_positions(C)
    num, mag = _numerator(lift, dn_diff_density, battery, m)
    den = math.factorial(m) * battery.kernel(lift)[:, pos].sum(axis=1)
    ratio = _pair_ratios(num, mag, den, slack)
    ok = _within(ratio, alpha_max)
    witnesses = np.flatnonzero(~ok).tolist()
    labels = {}
    for p in witnesses:
        label = battery.labels_g[battery.pairs()[p][0]]
        labels[label] = labels.get(label, 0) + 1
    return InclusionVerdict(
        candidate=tuple(int(c) for c in grid.interior_idx[pos]),
        alpha_star=float(np.max(ratio)) if ratio.size else 0.0,
        admissible=not witnesses,
        witnesses=witnesses,
        battery_size=len(battery),
        battery_labels=labels,
    )


@dataclass(frozen=True)
class SupportEstimate:
    cells: tuple
    n_candidates: int
    n_admissible: int


def support_reconstruct(
    lift: HarmonicLift,
    dn_diff,
    battery: TestBattery,
    m: int,
    candidate_family=None,
    alpha_max: float = math.inf,
    pairs_of_intervals: bool = False,
    slack: float = DEFAULT_SLACK,
) -> SupportEstimate:
    """Intersection of all admissible candidate sets.

    The default family is every interval of interior cells plus the empty
    set; ``pairs_of_intervals`` adds every union of two intervals separated
    by at least one cell.  An explicit ``candidate_family`` replaces both.
    """
    grid = lift.grid
    n = grid.n_interior
    num, mag = _numerator(lift, dn_diff, battery, m)
    K = math.factorial(m) * battery.kernel(lift)

    def admissible(den):
        # den: (pairs, candidates)
        ratio = _pair_ratios(num[:, None], mag[:, None], den, slack)
        return np.all(_within(ratio, alpha_max), axis=0)

    keep = np.ones(n, dtype=bool)
    n_candidates = n_admissible = 0
    if candidate_family is not None:
        for cand in candidate_family:
            pos = grid.interior_positions(cand)
            mask = np.zeros(n, dtype=bool)
            mask[pos] = True
            n_candidates += 1
            if admissible(K[:, pos].sum(axis=1)[:, None])[0]:
                n_admissible += 1
                keep &= mask
        return SupportEstimate(tuple(int(c) for c in grid.interior_idx[keep]), n_candidates, n_admissible)

    # intervals [i, j]; index 0 is the empty set.  Running sums restart at
    # each i: differences of one global cumsum cancel badly when a kernel
    # row spans many orders of magnitude (localized data).
    starts, ends = np.triu_indices(n)
    dens = np.concatenate(
        [np.zeros((K.shape[0], 1))] + [np.cumsum(K[:, i:], axis=1) for i in range(n)], axis=1
    )
    starts = np.concatenate([[n], starts])
    ends = np.concatenate([[-1], ends])
    cols = np.arange(n)
    masks = (cols[None, :] >= starts[:, None]) & (cols[None, :] <= ends[:, None])
    ok = admissible(dens)
    n_candidates += ok.size
    n_admissible += int(ok.sum())
    if ok.any():
        keep &= np.all(masks[ok], axis=0)
    if pairs_of_intervals:
        for c1 in range(1, len(starts)):
            later = np.flatnonzero(starts > ends[c1] + 1)
            if later.size == 0:
                continue
            ok2 = admissible(dens[:, [c1]] + dens[:, later])
            n_candidates += later.size
            if ok2.any():
                n_admissible += int(ok2.sum())
                keep &= masks[c1] | np.all(masks[later[ok2]], axis=0)
    return SupportEstimate(tuple(int(c) for c in grid.interior_idx[keep]), n_candidates, n_admissible)


# Inner support


def contiguous_balls(grid, width: int) -> list[tuple]:
    """All runs of ``width`` consecutive interior cells."""
    cells = grid.interior_idx
    if width < 1 or width > cells.size:
        raise DomainError(f"ball width must lie in [1, {cells.size}], got {width}")
    return [tuple(int(c) for c in cells[i : i + width]) for i in range(cells.size - width + 1)]


def inner_support_scan(
    lift: HarmonicLift,
    dn_diff,
    balls,
    alpha_grid,
    battery: TestBattery,
    m: int,
    definiteness=None,
    slack: float = DEFAULT_SLACK,
) -> tuple:
    """Union of balls ``B`` with ``form(q) >= form(q0) + alpha T_B`` for some alpha.

    For ``definiteness=LE`` the mirrored test ``form(q) <= form(q0) - alpha T_B``
    is used.  Only positive alphas are meaningful.
    """
    if definiteness is None:
        raise DomainError("inner support scan needs definiteness GE or LE")
    definiteness = Ordering(definiteness)
    if definiteness is Ordering.INCOMPARABLE:
        raise DomainError("definiteness must be GE or LE")
    grid = lift.grid
    sign = 1.0 if definiteness is Ordering.GE else -1.0
    num, mag = _numerator(lift, dn_diff, battery, m)
    K = math.factorial(m) * battery.kernel(lift)
    alphas = np.asarray(sorted(float(a) for a in alpha_grid if a > 0))
    found = set()
    for ball in balls:
        pos = grid.interior_positions(ball)
        den = K[:, pos].sum(axis=1)
        # (pairs, alphas): sign*num - alpha*den >= -tol
        margin = sign * num[:, None] - alphas[None, :] * den[:, None]
        tol = slack * (mag[:, None] + alphas[None, :] * den[:, None])
        if np.any(np.all(margin >= -tol, axis=0)):
            found.update(int(c) for c in grid.interior_idx[pos])
    return tuple(sorted(found))


# Potential reconstruction


def even_partition(grid, parts: int) -> list[tuple]:
    """Split the interior cells into ``parts`` contiguous groups of near-equal size."""
    if parts < 1 or parts > grid.n_interior:
        raise DomainError(f"partition size must lie in [1, {grid.n_interior}], got {parts}")
    return [tuple(int(c) for c in chunk) for chunk in np.array_split(grid.interior_idx, parts)]


@dataclass(frozen=True)
class ReconstructionResult:
    partition: list
    estimate: Potential
    per_cell_bounds: list
    battery_size: int
    bisection_depth: int
    inconsistent: list
    unresolved: list
    rounds: int


def reconstruct_potential(
    lift: HarmonicLift,
    unknown,
    partition,
    value_range,
    depth: int,
    battery: TestBattery,
    m: int,
    slack: float = DEFAULT_SLACK,
    max_rounds: int | None = None,
) -> ReconstructionResult:
    """Certified per-cell bisection for a potential piecewise constant on ``partition``.

    Each cell ``P`` keeps a bracket ``[l_P, u_P]``.  A trial value ``c`` is
    tested twice against piecewise-constant comparison potentials:

    * ``psi = c`` on ``P`` and ``l`` elsewhere: if ``q >= psi`` fails, then
      ``q_P < c`` and ``u_P`` drops to ``c``;
    * ``psi = c`` on ``P`` and ``u`` elsewhere: if ``q <= psi`` fails, then
      ``q_P > c`` and ``l_P`` rises to ``c``.

    Only failures carry information, so trials at the midpoint and then the
    quarter points are tried until one decides.  Sweeps repeat until every
    bracket has width ``<= (hi - lo) 2^-depth`` or a sweep makes no progress.
    A trial where both comparisons fail marks the cell inconsistent.
    """
    grid = lift.grid
    lo, hi = map(float, value_range)
    if not hi > lo:
        raise DomainError(f"value range needs lo < hi, got {value_range}")
    if int(depth) != depth or depth < 0:
        raise DomainError(f"depth must be a nonnegative integer, got {depth}")
    if not hasattr(unknown, "values"):
        raise DomainError("unknown must be an m-form evaluator")
    covered = np.concatenate([grid.interior_positions(P) for P in partition])
    if covered.size != grid.n_interior or np.unique(covered).size != covered.size:
        raise DomainError("partition must be a disjoint cover of the interior cells")
    battery.check_parity()
    parts = len(partition)
    K = math.factorial(m) * battery.kernel(lift)
    KP = np.stack([K[:, grid.interior_positions(P)].sum(axis=1) for P in partition], axis=1)
    y = unknown.values(battery)
    ymag = unknown.magnitudes(battery)

    def holds(psi, direction):
        diff = direction * (y - KP @ psi)
        return bool(np.all(diff >= -slack * (ymag + np.abs(KP) @ np.abs(psi))))

    target = (hi - lo) * 2.0 ** (-int(depth))
    l = np.full(parts, lo)
    u = np.full(parts, hi)
    inconsistent = set()
    if not holds(np.full(parts, lo), 1.0) or not holds(np.full(parts, hi), -1.0):
        # q leaves the value range somewhere; no bracket can be certified
        inconsistent.update(range(parts))
    if max_rounds is None:
        max_rounds = 4 * (int(depth) + 2)
    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        progress = False
        for j in range(parts):
            if j in inconsistent or u[j] - l[j] <= target:
                continue
            width = u[j] - l[j]
            for c in (l[j] + 0.5 * width, l[j] + 0.25 * width, l[j] + 0.75 * width):
                low, up = l.copy(), u.copy()
                low[j] = up[j] = c
                ge, le = holds(low, 1.0), holds(up, -1.0)
                if not ge and not le:
                    inconsistent.add(j)
                    break
                if not ge:
                    u[j] = c
                elif not le:
                    l[j] = c
                elif holds(low, -1.0) and holds(up, 1.0):
                    l[j] = u[j] = c  # equal within slack
                else:
                    continue
                progress = True
                break
        if not progress:
            break
    values = np.zeros(grid.n_interior)
    for j, P in enumerate(partition):
        values[grid.interior_positions(P)] = 0.5 * (l[j] + u[j])
    return ReconstructionResult(
        partition=[tuple(P) for P in partition],
        estimate=Potential(grid, values, m),
        per_cell_bounds=list(zip(l.tolist(), u.tolist())),
        battery_size=len(battery),
        bisection_depth=int(depth),
        inconsistent=sorted(inconsistent),
        unresolved=[j for j in range(parts) if u[j] - l[j] > target],
        rounds=rounds,
    )


# Stability constants


@dataclass(frozen=True)
class StabilityCurve:
    subspace_dims: list
    constants: list
    kappa_argmin: list


def nested_family(battery: TestBattery, sizes) -> list[TestBattery]:
    """Prefix sub-batteries: level ``l`` keeps the first ``sizes[l]`` g's and h's."""
    sizes = [int(s) for s in sizes]
    if any(b < a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
        raise DomainError("family sizes must be positive and nondecreasing")
    return [
        TestBattery(
            battery.g_list[:k],
            battery.h_list[:k],
            battery.seed,
            battery.m,
            list(battery.labels_g[:k]),
        )
        for k in sizes
    ]


def _sup_normalize(Q, coeffs):
    kappa = coeffs @ Q
    scale = np.max(np.abs(kappa), axis=-1)
    return coeffs / scale[..., None]


def lipschitz_estimate(
    lift: HarmonicLift,
    Q_basis,
    H_family,
    m: int,
    sphere_samples: int = 256,
    seed: int = 0,
    polish: bool = True,
) -> StabilityCurve:
    """Sampled lower-bound constants ``c(l)`` over a nested battery family.

    ``c(l) = min_kappa max_{(g,h) in H_l} |m! * integral(kappa v_g^m v_h)|``
    over ``kappa`` on the unit sup-norm sphere of ``span(Q_basis)``.  The
    candidate kappas are seeded samples plus the signed basis vertices,
    optionally polished by Nelder-Mead on the finest level; the same pool is
    scored at every level, so ``c`` is nondecreasing by construction.  A
    sampled minimum can only overestimate the true constant.
    """
    grid = lift.grid
    Q = np.stack([grid.check_interior(b) for b in Q_basis])
    if np.linalg.matrix_rank(Q) < Q.shape[0]:
        raise DomainError("Q_basis must be linearly independent")
    dim = Q.shape[0]
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=(int(sphere_samples), dim))
    coeffs /= np.linalg.norm(coeffs, axis=1, keepdims=True)
    coeffs = np.concatenate([coeffs, np.eye(dim), -np.eye(dim)])
    coeffs = _sup_normalize(Q, coeffs)

    fact = float(math.factorial(m))
    level_maps = []
    for battery in H_family:
        if battery.m != m:
            raise DomainError("every H-family battery must use the same m")
        battery.check_parity()
        level_maps.append(fact * battery.kernel(lift) @ Q.T)  # (pairs, dim)

    def score(A, c):
        return np.max(np.abs(A @ c.T), axis=0)

    if polish and level_maps:
        A = level_maps[-1]
        best = coeffs[np.argsort(score(A, coeffs))[: min(4, len(coeffs))]]

        def objective(c):
            kappa = c @ Q
            peak = np.max(np.abs(kappa))
            return np.inf if peak == 0 else float(np.max(np.abs(A @ c))) / peak

        polished = [minimize(objective, c0, method="Nelder-Mead").x for c0 in best]
        coeffs = np.concatenate([coeffs, _sup_normalize(Q, np.array(polished))])

    constants, argmins = [], []
    for A in level_maps:
        scores = score(A, coeffs)
        k = int(np.argmin(scores))
        constants.append(float(scores[k]))
        argmins.append(coeffs[k].copy())
    return StabilityCurve(
        subspace_dims=[len(b) for b in H_family],
        constants=constants,
        kappa_argmin=argmins,
    )
