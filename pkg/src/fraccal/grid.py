"""Truncated 1D computational domain.

The real line is cut down to ``[a - collar, b + collar]`` and split into
``n_cells`` uniform cells.  Cells whose centers fall strictly inside
``(a, b)`` form the interior (the domain where the equation holds); the rest
form the exterior collar where Dirichlet data live.  Grid functions vanish
identically beyond the collar.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, InvalidGeometryError

MIN_CELLS = 8


@dataclass(frozen=True, eq=False)
class Grid:
    a: float
    b: float
    collar: float
    n_cells: int
    h: float = field(init=False)
    centers: np.ndarray = field(init=False, repr=False)
    interior_idx: np.ndarray = field(init=False, repr=False)
    exterior_idx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = (self.b - self.a + 2.0 * self.collar) / self.n_cells
        centers = self.a - self.collar + (np.arange(self.n_cells) + 0.5) * h
        inside = (centers > self.a) & (centers < self.b)
        for name, value in (
            ("h", h),
            ("centers", centers),
            ("interior_idx", np.flatnonzero(inside)),
            ("exterior_idx", np.flatnonzero(~inside)),
        ):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_interior(self) -> int:
        return int(self.interior_idx.size)

    @property
    def n_exterior(self) -> int:
        return int(self.exterior_idx.size)

    @property
    def interior_centers(self) -> np.ndarray:
        return self.centers[self.interior_idx]

    @property
    def exterior_centers(self) -> np.ndarray:
        return self.centers[self.exterior_idx]

    def fingerprint(self) -> tuple:
        return (float(self.a), float(self.b), float(self.collar), int(self.n_cells))

    def same_as(self, other: "Grid") -> bool:
        return other is self or self.fingerprint() == other.fingerprint()

    # Embedding helpers: interior/exterior vectors <-> full-length vectors.

    def embed(self, interior=None, exterior=None) -> np.ndarray:
        """Assemble a full grid function from interior and exterior parts."""
        out = np.zeros(self.n_cells)
        if interior is not None:
            out[self.interior_idx] = self.check_interior(interior)
        if exterior is not None:
            out[self.exterior_idx] = self.check_exterior(exterior)
        return out

    def check_full(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_cells,):
            raise GridMismatchError(
                f"expected {self.n_cells} cell values, got shape {values.shape}"
            )
        return values

    def check_interior(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_interior,):
            raise GridMismatchError(
                f"expected {self.n_interior} interior values, got shape {values.shape}"
            )
        return values

    def check_exterior(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_exterior,):
            raise GridMismatchError(
                f"expected {self.n_exterior} exterior values, got shape {values.shape}"
            )
        return values

    def interior_positions(self, cells) -> np.ndarray:
        """Map global cell indices to positions within the interior vector.

        Raises IndexError if any cell is not an interior cell.
        """
        cells = np.asarray(sorted(set(int(c) for c in cells)), dtype=int)
        pos = np.searchsorted(self.interior_idx, cells)
        ok = (pos < self.n_interior) & (
            self.interior_idx[np.minimum(pos, self.n_interior - 1)] == cells
        )
        if cells.size and not ok.all():
            raise IndexError(f"cells {cells[~ok].tolist()} are not interior cells")
        return pos

    def exterior_positions(self, cells) -> np.ndarray:
        cells = np.asarray(sorted(set(int(c) for c in cells)), dtype=int)
        pos = np.searchsorted(self.exterior_idx, cells)
        ok = (pos < self.n_exterior) & (
            self.exterior_idx[np.minimum(pos, self.n_exterior - 1)] == cells
        )
        if cells.size and not ok.all():
            raise IndexError(f"cells {cells[~ok].tolist()} are not exterior cells")
        return pos


def build_grid(a: float, b: float, collar: float, n_cells: int) -> Grid:
    """Build a cell-centered grid over ``[a - collar, b + collar]``.

    A center landing exactly on ``a`` or ``b`` is classified as exterior.
    """
    if not (np.isfinite(a) and np.isfinite(b) and b > a):
        raise InvalidGeometryError(f"need finite a < b, got a={a}, b={b}")
    if not (np.isfinite(collar) and collar > 0):
        raise InvalidGeometryError(f"collar must be positive, got {collar}")
    if int(n_cells) != n_cells or n_cells < MIN_CELLS:
        raise InvalidGeometryError(f"n_cells must be an integer >= {MIN_CELLS}, got {n_cells}")
    grid = Grid(float(a), float(b), float(collar), int(n_cells))
    if grid.n_interior == 0 or grid.n_exterior == 0:
        raise InvalidGeometryError("grid too coarse: interior or exterior is empty")
    return grid


def integrate(grid: Grid, values, subset=None) -> float:
    """Midpoint quadrature ``h * sum(values[j] for j in subset)``.

    ``values`` is a full grid function; ``subset`` holds global cell indices
    and defaults to every cell.
    """
    values = grid.check_full(values)
    if subset is None:
        return float(grid.h * values.sum())
    idx = np.asarray(list(subset), dtype=int)
    if idx.size == 0:
        return 0.0
    if idx.min() < 0 or idx.max() >= grid.n_cells:
        raise IndexError(f"subset index out of range for {grid.n_cells} cells")
    return float(grid.h * values[idx].sum())


def lp_norm(grid: Grid, values, p: float = 2.0) -> float:
    """Discrete L^p norm ``(h * sum |v|^p)^(1/p)`` of an arbitrary cell vector."""
    values = np.asarray(values, dtype=float)
    return float((grid.h * np.sum(np.abs(values) ** p)) ** (1.0 / p))
