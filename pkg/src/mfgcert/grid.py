"""Staggered finite-volume discretisation of a box domain.

Scalars (densities, value functions, multiplier densities) live at cell
centres, vector fields (fluxes, gradients) live on interior faces.  Boundary
faces are not stored: their normal component is identically zero, which is
the discrete form of the no-flux condition ``(grad m - w) . n = 0``.

A face field is a tuple with one array per axis.  Along axis ``k`` the array
has ``cells[k] - 1`` entries (the interior faces) and ``cells[j]`` entries
along every other axis ``j``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mfgcert.errors import IncompatibleRhs, NoConvergence, SpecError

__all__ = [
    "Grid",
    "gradient",
    "divergence",
    "laplacian",
    "integrate",
    "inner_cells",
    "inner_faces",
    "cell_average",
    "face_average",
    "neumann_poisson",
    "solve_divergence",
    "write_field",
    "read_field",
]

COMPAT_RTOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform cell grid on the box ``[0, extent[0]] x ... x [0, extent[d-1]]``."""

    extent: tuple
    cells: tuple

    def __post_init__(self):
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)
        if len(extent) != len(cells):
            raise SpecError("extent and cells must have the same length")
        if len(cells) not in (1, 2):
            raise SpecError(f"only dimensions 1 and 2 are supported, got {len(cells)}")
        if any(c < 2 for c in cells):
            raise SpecError(f"every axis needs at least 2 cells, got {cells}")
        if any(not np.isfinite(e) or e <= 0 for e in extent):
            raise SpecError(f"extents must be positive, got {extent}")
        if float(np.prod(extent)) <= 1.0:
            raise SpecError(
                f"domain measure |Omega| = {np.prod(extent):g} must be strictly "
                "greater than 1 so that the uniform density 1/|Omega| is feasible"
            )

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def h(self) -> tuple:
        return tuple(e / c for e, c in zip(self.extent, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def measure(self) -> float:
        return float(np.prod(self.extent))

    def face_shape(self, axis: int) -> tuple:
        shape = list(self.cells)
        shape[axis] -= 1
        return tuple(shape)

    @property
    def n_faces(self) -> int:
        return sum(int(np.prod(self.face_shape(k))) for k in range(self.dim))

    def centers(self) -> tuple:
        """Cell-centre coordinates as a tuple of broadcastable arrays."""
        axes = [
            (np.arange(n) + 0.5) * hk for n, hk in zip(self.cells, self.h)
        ]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def zeros_faces(self) -> tuple:
        return tuple(np.zeros(self.face_shape(k)) for k in range(self.dim))

    # flat <-> structured conversions used by the sparse solvers
    def flatten_faces(self, v) -> np.ndarray:
        return np.concatenate([np.asarray(vk, dtype=float).ravel() for vk in v])

    def unflatten_faces(self, flat) -> tuple:
        out, start = [], 0
        for k in range(self.dim):
            shape = self.face_shape(k)
            n = int(np.prod(shape))
            out.append(np.asarray(flat[start:start + n]).reshape(shape))
            start += n
        return tuple(out)

    # assembled operators
    @cached_property
    def gradient_matrix(self) -> sp.csr_matrix:
        """Sparse (n_faces x size) matrix of the two-point face gradient."""
        blocks = []
        for k in range(self.dim):
            eye = []
            for j, n in enumerate(self.cells):
                if j == k:
                    diff = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1],
                                    shape=(n - 1, n))
                    eye.append(diff / self.h[k])
                else:
                    eye.append(sp.identity(n))
            block = eye[0]
            for factor in eye[1:]:
                block = sp.kron(block, factor)
            blocks.append(block)
        return sp.vstack(blocks).tocsr()

    @cached_property
    def divergence_matrix(self) -> sp.csr_matrix:
        return (-self.gradient_matrix.T).tocsr()

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        return (self.divergence_matrix @ self.gradient_matrix).tocsr()

    @cached_property
    def average_matrix(self) -> sp.csr_matrix:
        """Sparse (dim*size x n_faces) face-to-cell averaging.

        Row block ``k`` maps the axis-``k`` faces to the ``k``-th component of
        a cell vector; each cell receives half of each adjacent face.
        """
        rows = []
        for k in range(self.dim):
            factors = []
            for j, n in enumerate(self.cells):
                if j == k:
                    factors.append(0.5 * sp.diags([np.ones(n - 1), np.ones(n - 1)],
                                                  [0, -1], shape=(n, n - 1)))
                else:
                    factors.append(sp.identity(n))
            block = factors[0]
            for factor in factors[1:]:
                block = sp.kron(block, factor)
            rows.append(block)
        return sp.block_diag(rows).tocsr()


def gradient(grid: Grid, m) -> tuple:
    m = np.asarray(m, dtype=float).reshape(grid.shape)
    return tuple(np.diff(m, axis=k) / grid.h[k] for k in range(grid.dim))


def divergence(grid: Grid, v) -> np.ndarray:
    out = np.zeros(grid.shape)
    for k in range(grid.dim):
        pad = [(0, 0)] * grid.dim
        pad[k] = (1, 1)
        out += np.diff(np.pad(np.asarray(v[k], dtype=float), pad), axis=k) / grid.h[k]
    return out


def laplacian(grid: Grid, m) -> np.ndarray:
    return divergence(grid, gradient(grid, m))


def integrate(grid: Grid, m) -> float:
    return float(np.sum(np.asarray(m, dtype=float)) * grid.cell_volume)


def inner_cells(grid: Grid, a, b) -> float:
    return float(np.sum(np.asarray(a) * np.asarray(b)) * grid.cell_volume)


def inner_faces(grid: Grid, v, w) -> float:
    return float(sum(np.sum(vk * wk) for vk, wk in zip(v, w)) * grid.cell_volume)


def cell_average(grid: Grid, v) -> np.ndarray:
    """Average a face field onto cell centres; returns shape ``(dim, *cells)``."""
    out = np.empty((grid.dim,) + grid.shape)
    for k in range(grid.dim):
        pad = [(0, 0)] * grid.dim
        pad[k] = (1, 1)
        padded = np.pad(np.asarray(v[k], dtype=float), pad)
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        out[k] = 0.5 * (padded[tuple(lo)] + padded[tuple(hi)])
    return out


def face_average(grid: Grid, b) -> tuple:
    """Average a cell vector field ``(dim, *cells)`` onto interior faces.

    This is the exact adjoint of :func:`cell_average`.
    """
    b = np.asarray(b, dtype=float).reshape((grid.dim,) + grid.shape)
    out = []
    for k in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        out.append(0.5 * (b[k][tuple(lo)] + b[k][tuple(hi)]))
    return tuple(out)


def neumann_poisson(grid: Grid, rhs, mean: float = 0.0, tol: float = 1e-10,
                    maxiter: int | None = None) -> np.ndarray:
    """Solve ``-laplacian(m) = rhs`` with zero flux and prescribed mean.

    Jacobi-preconditioned conjugate gradients; the constant mode is removed
    afterwards so the result has exactly the requested mean.
    """
    rhs = np.asarray(rhs, dtype=float).reshape(grid.shape)
    total = integrate(grid, rhs)
    scale = float(np.sum(np.abs(rhs))) * grid.cell_volume
    if abs(total) > COMPAT_RTOL * scale:
        raise IncompatibleRhs(
            f"rhs integrates to {total:.3e}; Neumann data must have zero integral"
        )
    b = (rhs - total / grid.measure).ravel()
    if not np.any(b):
        return np.full(grid.shape, float(mean))
    A = -grid.laplacian_matrix
    jacobi = spla.LinearOperator(A.shape, matvec=lambda x, d=1.0 / A.diagonal(): d * x)
    if maxiter is None:
        maxiter = 10 * grid.size
    x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=jacobi)
    if info != 0:
        raise NoConvergence(f"CG did not reach rtol={tol:g} in {maxiter} iterations")
    x = x - x.mean() + mean
    return x.reshape(grid.shape)


def solve_divergence(grid: Grid, f, tol: float = 1e-10) -> tuple:
    """Return a face field ``v`` with ``divergence(v) = f``.

    Uses the potential field ``v = -gradient(u)`` with ``-laplacian(u) = f``.
    """
    u = neumann_poisson(grid, f, 0.0, tol=tol)
    return tuple(-gk for gk in gradient(grid, u))


# field files: raw little-endian float64 plus a key=value sidecar header

def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".hdr")


def write_field(path, values, grid: Grid, kind: str = "cell") -> None:
    path = Path(path)
    data = np.ascontiguousarray(values, dtype="<f8")
    raw = data.tobytes(order="C")
    path.write_bytes(raw)
    lines = [
        f"dim={grid.dim}",
        "extents=" + ",".join(repr(e) for e in grid.extent),
        "cells=" + ",".join(str(c) for c in grid.cells),
        f"kind={kind}",
        "shape=" + ",".join(str(s) for s in data.shape),
        "dtype=float64-le",
        f"sha256={hashlib.sha256(raw).hexdigest()}",
    ]
    _header_path(path).write_text("\n".join(lines) + "\n")


def read_field(path, verify: bool = True):
    """Read a field file; returns ``(values, header, grid)``.

    Raises ``ValueError`` when the checksum in the header does not match,
    unless ``verify`` is false; ``header["checksum_ok"]`` records the outcome.
    """
    path = Path(path)
    header = {}
    for line in _header_path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
    raw = path.read_bytes()
    ok = hashlib.sha256(raw).hexdigest() == header.get("sha256")
    if verify and not ok:
        raise ValueError(f"checksum mismatch for {path}")
    header["checksum_ok"] = ok
    shape = tuple(int(s) for s in header["shape"].split(","))
    values = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)
    grid = Grid(tuple(float(e) for e in header["extents"].split(",")),
                tuple(int(c) for c in header["cells"].split(",")))
    return values, header, grid
