"""Binary operator cache.

Layout (all little-endian): the 8 magic bytes ``FRACOP01``, ``n_cells`` as
uint64, ``n_cells`` float64 weights, then the ``n_cells x n_cells`` matrix
in row-major order.  The file name carries a hash of ``(s, geometry)``; on
load the stored weights and matrix are also checked against a fresh weight
computation, so a stale or foreign file forces reassembly.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from .fracop import FracOperator, assemble, centered_weights
from .grid import Grid

MAGIC = b"FRACOP01"


def fingerprint(grid: Grid, s: float) -> str:
    key = repr((float(s), *grid.fingerprint())).encode()
    return hashlib.sha256(key).hexdigest()[:16]


def cache_path(directory, grid: Grid, s: float) -> Path:
    return Path(directory) / f"fracop_{fingerprint(grid, s)}.bin"


def write_operator(path, op: FracOperator) -> None:
    n = op.grid.n_cells
    payload = (
        MAGIC
        + struct.pack("<Q", n)
        + np.ascontiguousarray(op.weights, dtype="<f8").tobytes()
        + np.ascontiguousarray(op.matrix, dtype="<f8").tobytes()
    )
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)  # single writer: readers never see a partial file


def read_operator(path, grid: Grid, s: float) -> FracOperator | None:
    """Load a cached operator; ``None`` if the file does not match (grid, s)."""
    data = Path(path).read_bytes()
    n = grid.n_cells
    expected = 8 + 8 + 8 * n + 8 * n * n
    if len(data) != expected or data[:8] != MAGIC or struct.unpack("<Q", data[8:16])[0] != n:
        return None
    weights = np.frombuffer(data, dtype="<f8", count=n, offset=16).astype(float)
    matrix = np.frombuffer(data, dtype="<f8", count=n * n, offset=16 + 8 * n).astype(float).reshape(n, n)
    if not np.array_equal(weights, centered_weights(s, n)):
        return None
    if not np.array_equal(matrix[0], weights / grid.h ** (2.0 * s)):
        return None
    weights.setflags(write=False)
    matrix.setflags(write=False)
    return FracOperator(grid=grid, s=float(s), weights=weights, matrix=matrix)


def cached_assemble(directory, grid: Grid, s: float) -> tuple[FracOperator, bool]:
    """Assemble through the cache; returns ``(operator, hit)``."""
    if not directory:
        return assemble(grid, s), False
    path = cache_path(directory, grid, s)
    if path.exists():
        op = read_operator(path, grid, s)
        if op is not None:
            return op, True
    op = assemble(grid, s)
    Path(directory).mkdir(parents=True, exist_ok=True)
    write_operator(path, op)
    return op, False


def matrix_hash(op: FracOperator) -> str:
    return hashlib.sha256(np.ascontiguousarray(op.matrix, dtype="<f8").tobytes()).hexdigest()
