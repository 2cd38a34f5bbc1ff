"""Uniform rectangular grid, field containers, and second-order difference operators.

All fields live on the nodes of a uniform nx-by-ny grid covering
[0, lx] x [0, ly].  Values are stored as (ny, nx) arrays so that
``values.ravel()`` enumerates nodes in row-major order, flat index
j*nx + i, node (i, j) sitting at (i*hx, j*hy).  First and second
derivatives use central stencils at interior nodes and second-order
one-sided stencils on the boundary, so every operator is second-order
accurate up to the edge of the domain (affine fields are differentiated
exactly, quadratics exactly at interior nodes).

Snapshot files are CSV with header ``x1,x2,value`` in the same row-major
node order, written with 17 significant digits so a write/read round
trip is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a uniform node-centered rectangular grid."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid too small: need nx, ny >= 3, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"domain lengths must be positive, got lx={self.lx}, ly={self.ly}")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def x1(self) -> np.ndarray:
        return np.arange(self.nx) * self.hx

    @property
    def x2(self) -> np.ndarray:
        return np.arange(self.ny) * self.hy

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays X1, X2 of shape (ny, nx)."""
        return np.meshgrid(self.x1, self.x2)

    def cell_weights(self) -> np.ndarray:
        """Trapezoidal node weights; also the finite-volume cell areas."""
        cx = np.ones(self.nx)
        cx[0] = cx[-1] = 0.5
        cy = np.ones(self.ny)
        cy[0] = cy[-1] = 0.5
        return (self.hx * self.hy) * cy[:, None] * cx[None, :]


def _grid_array(values, grid: GridSpec, name: str) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    if a.size == grid.nx * grid.ny:
        a = a.reshape(grid.shape)
    if a.shape != grid.shape:
        raise ValueError(f"{name}: expected shape {grid.shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite values")
    return a


@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = _grid_array(self.values, self.grid, "ScalarField")

    @classmethod
    def full(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "ScalarField":
        x1, x2 = grid.nodes()
        return cls(grid, np.broadcast_to(np.asarray(fn(x1, x2), dtype=float), grid.shape).copy())

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    grid: GridSpec
    comp1: np.ndarray
    comp2: np.ndarray

    def __post_init__(self):
        self.comp1 = _grid_array(self.comp1, self.grid, "VectorField.comp1")
        self.comp2 = _grid_array(self.comp2, self.grid, "VectorField.comp2")

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.comp1, self.comp2)


@dataclass
class SymTensorField:
    grid: GridSpec
    d11: np.ndarray
    d12: np.ndarray
    d22: np.ndarray

    def __post_init__(self):
        self.d11 = _grid_array(self.d11, self.grid, "SymTensorField.d11")
        self.d12 = _grid_array(self.d12, self.grid, "SymTensorField.d12")
        self.d22 = _grid_array(self.d22, self.grid, "SymTensorField.d22")

    def apply(self, w1: np.ndarray, w2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Node-wise matrix-vector product (D w)."""
        return self.d11 * w1 + self.d12 * w2, self.d12 * w1 + self.d22 * w2

    def quad_form(self, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
        """Node-wise quadratic form D w . w."""
        return self.d11 * w1 * w1 + 2.0 * self.d12 * w1 * w2 + self.d22 * w2 * w2


def deriv1(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order first derivative along an axis; one-sided at the ends."""
    if axis == 0:
        return deriv1(values.T, h, 1).T
    v = values
    out = np.empty_like(v)
    out[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2.0 * h)
    out[:, 0] = (-3.0 * v[:, 0] + 4.0 * v[:, 1] - v[:, 2]) / (2.0 * h)
    out[:, -1] = (3.0 * v[:, -1] - 4.0 * v[:, -2] + v[:, -3]) / (2.0 * h)
    return out


def deriv2(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order second derivative along an axis; one-sided at the ends."""
    if axis == 0:
        return deriv2(values.T, h, 1).T
    v = values
    h2 = h * h
    out = np.empty_like(v)
    out[:, 1:-1] = (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) / h2
    out[:, 0] = (2.0 * v[:, 0] - 5.0 * v[:, 1] + 4.0 * v[:, 2] - v[:, 3]) / h2
    out[:, -1] = (2.0 * v[:, -1] - 5.0 * v[:, -2] + 4.0 * v[:, -3] - v[:, -4]) / h2
    return out


def diff_x1(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, deriv1(f.values, f.grid.hx, axis=1))


def diff_x2(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, deriv1(f.values, f.grid.hy, axis=0))


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, deriv1(f.values, f.grid.hx, 1), deriv1(f.values, f.grid.hy, 0))


def hessian(f: ScalarField) -> SymTensorField:
    """Second-difference Hessian; the cross term composes the two first-derivative stencils."""
    g = f.grid
    d11 = deriv2(f.values, g.hx, axis=1)
    d22 = deriv2(f.values, g.hy, axis=0)
    d12 = deriv1(deriv1(f.values, g.hy, axis=0), g.hx, axis=1)
    return SymTensorField(g, d11, d12, d22)


def integrate(f: ScalarField) -> float:
    """Trapezoidal quadrature over the rectangle; exact for affine integrands."""
    return float(np.sum(f.grid.cell_weights() * f.values))


# ---------------------------------------------------------------------------
# snapshot files: CSV "x1,x2,value", row-major node order

def write_snapshot(f: ScalarField, path) -> None:
    x1, x2 = f.grid.nodes()
    cols = np.column_stack([x1.ravel(), x2.ravel(), f.values.ravel()])
    np.savetxt(path, cols, delimiter=",", header="x1,x2,value", comments="", fmt="%.17g")


def read_snapshot(path, grid: GridSpec | None = None) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns x1,x2,value")
    x1s, x2s, vals = data[:, 0], data[:, 1], data[:, 2]
    nx = int(np.count_nonzero(x2s == x2s[0]))
    if nx < 3 or data.shape[0] % nx != 0:
        raise ValueError(f"{path}: rows are not in row-major grid order")
    ny = data.shape[0] // nx
    inferred = GridSpec(nx, ny, lx=float(x1s[nx - 1]), ly=float(x2s[-1]))
    if grid is not None:
        gx1, gx2 = grid.nodes()
        if (nx, ny) != (grid.nx, grid.ny) or not (
            np.allclose(x1s, gx1.ravel(), rtol=1e-12, atol=1e-14)
            and np.allclose(x2s, gx2.ravel(), rtol=1e-12, atol=1e-14)
        ):
            raise ValueError(f"{path}: node coordinates do not match the {grid.nx}x{grid.ny} grid")
        return ScalarField(grid, vals)
    return ScalarField(inferred, vals)
