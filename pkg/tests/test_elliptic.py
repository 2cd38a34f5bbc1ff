import numpy as np
import pytest

from dispersim.elliptic import PoissonSolver, solve_poisson
from dispersim.grid import GridSpec, ScalarField, diff_x1


def test_zero_rhs_gives_zero():
    g = GridSpec(17, 17)
    v, rep = solve_poisson(ScalarField.full(g, 0.0))
    assert np.max(np.abs(v.values)) == 0.0
    assert rep.converged and rep.iterations == 0


def test_boundary_exactly_zero():
    g = GridSpec(21, 21)
    rng = np.random.default_rng(0)
    v, _ = solve_poisson(ScalarField(g, rng.standard_normal(g.shape)))
    assert np.max(np.abs(v.values[0, :])) == 0.0
    assert np.max(np.abs(v.values[-1, :])) == 0.0
    assert np.max(np.abs(v.values[:, 0])) == 0.0
    assert np.max(np.abs(v.values[:, -1])) == 0.0


def test_manufactured_convergence():
    errs = []
    for n in (33, 65):
        g = GridSpec(n, n)
        x1, x2 = g.nodes()
        exact = np.sin(np.pi * x1) * np.sin(np.pi * x2)
        v, rep = solve_poisson(ScalarField(g, -2.0 * np.pi**2 * exact), tol=1e-12)
        assert rep.converged
        errs.append(np.max(np.abs(v.values - exact)))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_symmetric_data_symmetric_solution():
    g = GridSpec(33, 33)
    u = ScalarField.from_function(g, lambda x1, x2: np.cos(np.pi * x1))
    v, _ = solve_poisson(diff_x1(u), tol=1e-12)
    flipped = v.values[::-1, :]
    assert np.max(np.abs(v.values - flipped)) < 1e-9 * max(1.0, np.max(np.abs(v.values)))


def test_discrete_maximum_principle():
    g = GridSpec(25, 25)
    rng = np.random.default_rng(1)
    rhs = ScalarField(g, -rng.uniform(0.0, 1.0, g.shape))  # rhs <= 0 everywhere
    v, rep = solve_poisson(rhs, tol=1e-12)
    assert rep.converged
    assert np.min(v.values) >= -1e-10 * max(1.0, np.max(np.abs(v.values)))


def test_linearity():
    g = GridSpec(21, 21)
    rng = np.random.default_rng(2)
    rhs = ScalarField(g, rng.standard_normal(g.shape))
    v1, _ = solve_poisson(rhs, tol=1e-12)
    v2, _ = solve_poisson(ScalarField(g, 3.0 * rhs.values), tol=1e-12)
    assert np.max(np.abs(v2.values - 3.0 * v1.values)) < 1e-9 * max(1.0, np.max(np.abs(v2.values)))


def test_residual_contract():
    g = GridSpec(29, 29)
    rng = np.random.default_rng(3)
    rhs = ScalarField(g, rng.standard_normal(g.shape))
    solver = PoissonSolver(g)
    v, rep = solver.solve(rhs, tol=1e-10)
    # independent recomputation of the residual norm
    b = -rhs.values[1:-1, 1:-1].ravel()
    r = b - solver.matrix @ v.values[1:-1, 1:-1].ravel()
    assert rep.residual_norm == pytest.approx(float(np.linalg.norm(r)), rel=1e-13, abs=1e-300)
    assert rep.converged
    assert rep.residual_norm <= 1e-10 * np.linalg.norm(b)


def test_nonconvergence_reported():
    g = GridSpec(33, 33)
    rng = np.random.default_rng(4)
    rhs = ScalarField(g, rng.standard_normal(g.shape))
    v, rep = solve_poisson(rhs, tol=1e-14, max_iter=3)
    assert not rep.converged
    assert rep.iterations == 3
    assert np.all(np.isfinite(v.values))


def test_warm_start_helps():
    g = GridSpec(33, 33)
    rng = np.random.default_rng(5)
    rhs = ScalarField(g, rng.standard_normal(g.shape))
    solver = PoissonSolver(g)
    v, rep_cold = solver.solve(rhs, tol=1e-10)
    _, rep_warm = solver.solve(rhs, tol=1e-10, x0=v.values)
    assert rep_warm.iterations <= rep_cold.iterations
    assert rep_warm.converged
