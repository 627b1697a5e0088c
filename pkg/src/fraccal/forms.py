"""The m-th DN derivative as an m-form, the testing operator and orderings.

Everything here reduces to quadratures of ``density * v_g^m * v_h`` over the
interior, where ``v_g``, ``v_h`` are s-harmonic extensions.  A battery of
exterior data fixes the finite set of ``(g, h)`` pairs on which two forms are
compared; for odd ``m`` the pairs are ``(g, g)``, for even ``m`` every
``(g, h)`` with ``h >= 0``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridMismatchError, ParityError
from .grid import Grid, lp_norm
from .solver import HarmonicLift, fd_derivative

DEFAULT_SLACK = 1e-9


class Ordering(str, enum.Enum):
    GE = "GE"
    LE = "LE"
    INCOMPARABLE = "INCOMPARABLE"


@dataclass(frozen=True, eq=False)
class Potential:
    """Potential ``q`` sampled on the interior cells, with exponent ``m``."""

    grid: Grid
    values: np.ndarray
    m: int

    def __post_init__(self):
        values = self.grid.check_interior(self.values).copy()
        if not np.all(np.isfinite(values)):
            raise DomainError("potential values must be finite")
        if int(self.m) != self.m or self.m < 2:
            raise DomainError(f"exponent m must be an integer >= 2, got {self.m}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "m", int(self.m))

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @classmethod
    def from_function(cls, grid: Grid, func, m: int) -> "Potential":
        return cls(grid, np.asarray(func(grid.interior_centers), dtype=float), m)

    @classmethod
    def piecewise(cls, grid: Grid, partition, levels, m: int, base: float = 0.0):
        values = np.full(grid.n_interior, float(base))
        for cells, level in zip(partition, levels):
            values[grid.interior_positions(cells)] = level
        return cls(grid, values, m)


def indicator(grid: Grid, cells) -> np.ndarray:
    """Interior-vector indicator of a set of global interior cell indices."""
    out = np.zeros(grid.n_interior)
    out[grid.interior_positions(cells)] = 1.0
    return out


@dataclass(eq=False)
class TestBattery:
    """Finite stand-in for "all exterior data".

    ``labels_g`` records where each ``g`` came from (random bump or a
    localized potential for a named target set).
    """

    __test__ = False  # not a pytest class

    g_list: np.ndarray
    h_list: np.ndarray
    seed: int
    m: int
    labels_g: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.g_list = np.atleast_2d(np.asarray(self.g_list, dtype=float))
        self.h_list = np.atleast_2d(np.asarray(self.h_list, dtype=float))
        if not self.labels_g:
            self.labels_g = ["given"] * len(self.g_list)

    def __len__(self):
        return len(self.pairs())

    def pairs(self) -> list[tuple[int, int]]:
        """Index pairs into (g_list, h_list); for odd m the second index is a g."""
        if self.m % 2:
            return [(i, i) for i in range(len(self.g_list))]
        return [(i, j) for i in range(len(self.g_list)) for j in range(len(self.h_list))]

    def check_parity(self, slack: float = 0.0) -> None:
        if self.m % 2 == 0 and len(self.h_list) and np.min(self.h_list) < -slack:
            raise ParityError("even m requires every pairing datum h >= 0")
        if len(self.g_list) == 0 or (self.m % 2 == 0 and len(self.h_list) == 0):
            raise DomainError("empty battery")

    def pair_data(self, pair) -> tuple[np.ndarray, np.ndarray]:
        i, j = pair
        return self.g_list[i], (self.g_list[j] if self.m % 2 else self.h_list[j])

    def lifts(self, lift: HarmonicLift) -> tuple[np.ndarray, np.ndarray]:
        key = ("lifts", id(lift))
        if key not in self._cache:
            vg = self.g_list @ lift.lift_matrix.T
            vh = self.h_list @ lift.lift_matrix.T if len(self.h_list) else np.empty((0, vg.shape[1]))
            self._cache[key] = (vg, vh)
        return self._cache[key]

    def kernel(self, lift: HarmonicLift) -> np.ndarray:
        """Matrix ``K[p, i] = h * v_g(x_i)^m * v_h(x_i)`` over parity-respecting pairs.

        For such batteries every entry is >= 0, which is what makes the
        monotonicity comparisons sound.
        """
        key = ("kernel", id(lift))
        if key not in self._cache:
            vg, vh = self.lifts(lift)
            m = self.m
            if m % 2:
                k = vg ** (m + 1)
            else:
                k = (vg**m)[:, None, :] * vh[None, :, :]
                k = k.reshape(-1, vg.shape[1])
            self._cache[key] = lift.grid.h * k
        return self._cache[key]


def _as_density(lift: HarmonicLift, density) -> np.ndarray:
    if isinstance(density, Potential):
        density = density.values
    return lift.grid.check_interior(density)


class MFormEvaluator:
    """``(g, h) -> scale * integral(density * v_g^m * v_h)`` over the interior."""

    def __init__(self, lift: HarmonicLift, density, m: int, scale: float = 1.0):
        self.lift = lift
        self.density = _as_density(lift, density)
        self.m = int(m)
        self.scale = float(scale)

    @classmethod
    def dn(cls, lift: HarmonicLift, q: Potential) -> "MFormEvaluator":
        """Evaluator of the m-th DN derivative through the integral identity."""
        return cls(lift, q.values, q.m, float(math.factorial(q.m)))

    @classmethod
    def testing(cls, lift: HarmonicLift, cells, m: int) -> "MFormEvaluator":
        return cls(lift, indicator(lift.grid, cells), m, 1.0)

    def __call__(self, g, h) -> float:
        vg, vh = self.lift.lift(g), self.lift.lift(h)
        return self.scale * self.lift.grid.h * float(np.sum(self.density * vg**self.m * vh))

    def values(self, battery: TestBattery) -> np.ndarray:
        self._check(battery)
        return self.scale * (battery.kernel(self.lift) @ self.density)

    def magnitudes(self, battery: TestBattery) -> np.ndarray:
        """Sum of absolute integrand contributions; sets the round-off scale."""
        self._check(battery)
        return abs(self.scale) * (np.abs(battery.kernel(self.lift)) @ np.abs(self.density))

    def _check(self, battery):
        if battery.m != self.m:
            raise DomainError(f"battery built for m={battery.m}, evaluator has m={self.m}")


class DNDerivativeEvaluator:
    """m-form read off the DN map by finite differences in the data scale.

    This is the measurement-side route: it only calls the semilinear solver,
    never the integral identity.  ``noise`` is the absolute accuracy assumed
    for each value when forming comparison slack.
    """

    def __init__(self, lift: HarmonicLift, q: Potential, eps=None, noise: float = 1e-6):
        self.lift = lift
        self.q = q
        self.m = q.m
        self.eps = eps
        self.noise = float(noise)
        self._derivs = {}

    def derivative(self, g) -> np.ndarray:
        key = np.asarray(g, dtype=float).tobytes()
        if key not in self._derivs:
            self._derivs[key] = fd_derivative(
                self.lift, self.q.values, g, self.m, self.m, eps=self.eps
            )
        return self._derivs[key]

    def __call__(self, g, h) -> float:
        h = self.lift.grid.check_exterior(h)
        return self.lift.grid.h * float(np.dot(h, self.derivative(g)))

    def values(self, battery: TestBattery) -> np.ndarray:
        return np.array([self(*battery.pair_data(p)) for p in battery.pairs()])

    def magnitudes(self, battery: TestBattery) -> np.ndarray:
        return np.abs(self.values(battery)) + self.noise / DEFAULT_SLACK


def mform_dn(lift: HarmonicLift, q: Potential, g, h) -> float:
    """``m! * integral(q * v_g^m * v_h)``: the m-th DN derivative paired with h."""
    if not q.grid.same_as(lift.grid):
        raise GridMismatchError("potential and lift live on different grids")
    return MFormEvaluator.dn(lift, q)(g, h)


def testing_operator(lift: HarmonicLift, cells, m: int, g, h) -> float:
    """``integral over cells of v_g^m * v_h`` (no factorial)."""
    return MFormEvaluator.testing(lift, cells, m)(g, h)


testing_operator.__test__ = False  # keep pytest from collecting it


def ordering_flags(eval1, eval2, battery: TestBattery, slack: float = DEFAULT_SLACK):
    """Return ``(ge, le, differences)`` for ``eval1 - eval2`` over the battery.

    Each pair is allowed a tolerance of ``slack`` times the combined
    magnitude of the two integrands at that pair.
    """
    battery.check_parity()
    diff = eval1.values(battery) - eval2.values(battery)
    tol = slack * (eval1.magnitudes(battery) + eval2.magnitudes(battery))
    ge = bool(np.all(diff >= -tol))
    le = bool(np.all(diff <= tol))
    return ge, le, diff


def compare_mforms(eval1, eval2, battery: TestBattery, slack: float = DEFAULT_SLACK) -> Ordering:
    """Ordering of two m-forms over the battery; GE wins ties."""
    ge, le, _ = ordering_flags(eval1, eval2, battery, slack)
    if ge:
        return Ordering.GE
    if le:
        return Ordering.LE
    return Ordering.INCOMPARABLE


def random_bumps(grid: Grid, count: int, rng: np.random.Generator, nonneg: bool = False):
    """Smooth exterior data: sums of 1-3 Gaussians centered in the collar.

    Rows are normalized to unit discrete L^2 norm over the exterior cells.
    """
    xe = grid.exterior_centers
    out = np.zeros((count, grid.n_exterior))
    for row in out:
        for _ in range(rng.integers(1, 4)):
            center = rng.choice(xe)
            width = rng.uniform(2.0 * grid.h, max(0.5 * grid.collar, 3.0 * grid.h))
            row += rng.normal() * np.exp(-0.5 * ((xe - center) / width) ** 2)
        if nonneg:
            np.abs(row, out=row)
        row /= lp_norm(grid, row)
    return out


def make_battery(
    lift: HarmonicLift,
    count: int,
    m: int,
    seed: int,
    include_localized=None,
    h_count: int | None = None,
    localize_options: dict | None = None,
) -> TestBattery:
    """Deterministic battery of random smooth data, optionally with localized potentials.

    ``include_localized`` is a list of target cell sets; every level of the
    localized-potential sequence for each target is appended to ``g_list``.
    For even ``m`` the ``h`` data are rectified to be nonnegative.
    """
    if count < 1:
        raise DomainError(f"battery needs count >= 1, got {count}")
    from .runge import localized_potentials  # runge depends on this module's helpers

    grid = lift.grid
    rng = np.random.default_rng(seed)
    g_list = [*random_bumps(grid, count, rng)]
    h_list = random_bumps(grid, count if h_count is None else h_count, rng, nonneg=(m % 2 == 0))
    labels = ["random"] * count
    options = {"a": m + 1, **(localize_options or {})}
    for target in include_localized or []:
        seq = localized_potentials(lift, target, **options)
        for level, entry in enumerate(seq.entries):
            g_list.append(entry.g / lp_norm(grid, entry.g))
            labels.append(f"localized:{min(target)}-{max(target)}@{level}")
    return TestBattery(np.array(g_list), h_list, seed, m, labels)
