"""Stream-function Poisson solver: 5-point Laplacian, zero Dirichlet boundary.

Solves lap(v) = rhs with v = 0 on the boundary of the rectangle, by
preconditioned conjugate gradients on the symmetric positive-definite
system (-lap_h) v = -rhs over the interior nodes.  The preconditioner is
diagonal (Jacobi); memory stays linear in node count.  The reported
residual is recomputed from scratch after the iteration (not the CG
recursion), so ``report.residual_norm`` always matches an independent
evaluation of ||A v - b||_2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import GridSpec, ScalarField


class SolverError(RuntimeError):
    """Linear or nonlinear solve failed in a way that invalidates the state."""


@dataclass
class EllipticSolveReport:
    iterations: int
    residual_norm: float
    converged: bool


def _laplacian_matrix(grid: GridSpec) -> sp.csr_matrix:
    mx, my = grid.nx - 2, grid.ny - 2
    ex = np.ones(mx)
    ey = np.ones(my)
    tx = sp.diags([-ex[1:], 2.0 * ex, -ex[1:]], [-1, 0, 1], format="csr") / grid.hx**2
    ty = sp.diags([-ey[1:], 2.0 * ey, -ey[1:]], [-1, 0, 1], format="csr") / grid.hy**2
    return (sp.kron(sp.identity(my, format="csr"), tx) + sp.kron(ty, sp.identity(mx, format="csr"))).tocsr()


class PoissonSolver:
    """Reusable solver instance owning the assembled matrix and its workspace."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.matrix = _laplacian_matrix(grid)
        self._inv_diag = 1.0 / self.matrix.diagonal()

    def solve(
        self,
        rhs: ScalarField,
        tol: float = 1e-10,
        max_iter: int = 5000,
        x0: np.ndarray | None = None,
    ) -> tuple[ScalarField, EllipticSolveReport]:
        """Solve lap(v) = rhs, v = 0 on the boundary, to ||Av-b|| <= tol*||b||."""
        if tol <= 0:
            raise ValueError("tol must be positive")
        if rhs.grid != self.grid:
            raise ValueError("rhs is on a different grid")
        A = self.matrix
        b = -rhs.values[1:-1, 1:-1].ravel()
        bnorm = float(np.linalg.norm(b))
        v = np.zeros(self.grid.shape)
        if bnorm == 0.0:
            return ScalarField(self.grid, v), EllipticSolveReport(0, 0.0, True)
        target = tol * bnorm

        x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float)[1:-1, 1:-1].ravel().copy()
        iterations = 0
        # restart loop: the CG recursion residual can drift from the true one
        for _ in range(4):
            r = b - A @ x
            rnorm = float(np.linalg.norm(r))
            if rnorm <= target:
                break
            z = self._inv_diag * r
            p = z.copy()
            rz = float(r @ z)
            while iterations < max_iter:
                Ap = A @ p
                pAp = float(p @ Ap)
                if not np.isfinite(pAp) or pAp <= 0.0:
                    raise SolverError("conjugate gradient broke down (non-finite or non-SPD step)")
                alpha = rz / pAp
                x += alpha * p
                r -= alpha * Ap
                iterations += 1
                rnorm = float(np.linalg.norm(r))
                if not np.isfinite(rnorm):
                    raise SolverError("non-finite residual in conjugate gradient iteration")
                if rnorm <= 0.9 * target:
                    break
                z = self._inv_diag * r
                rz_new = float(r @ z)
                p = z + (rz_new / rz) * p
                rz = rz_new
            if iterations >= max_iter:
                break

        residual = float(np.linalg.norm(b - A @ x))
        v[1:-1, 1:-1] = x.reshape(self.grid.ny - 2, self.grid.nx - 2)
        return ScalarField(self.grid, v), EllipticSolveReport(iterations, residual, residual <= target)

    def residual_norm(self, v: ScalarField, rhs: ScalarField) -> float:
        """||A v - b||_2 for an externally supplied candidate solution."""
        b = -rhs.values[1:-1, 1:-1].ravel()
        return float(np.linalg.norm(b - self.matrix @ v.values[1:-1, 1:-1].ravel()))


def solve_poisson(
    rhs: ScalarField, tol: float = 1e-10, max_iter: int = 5000
) -> tuple[ScalarField, EllipticSolveReport]:
    return PoissonSolver(rhs.grid).solve(rhs, tol=tol, max_iter=max_iter)
