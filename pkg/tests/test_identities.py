import numpy as np
import pytest

from dispersim.coefficients import PhysParams
from dispersim.grid import GridSpec, ScalarField
from dispersim.identities import (
    IdentityWorkspace,
    RecursionParams,
    Sym2,
    forcing_coefficients,
    log_kernel_average,
    power_equation_residual,
    reconstruct_hessian,
    recursion_threshold,
    sandwich_identity_residual,
    sandwich_identity_residuals,
    square_decomposition_residual,
    square_decomposition_residuals,
    superlinear_recursion,
    vector_calc_residuals,
)


# --- matrix square decomposition


def test_square_decomposition_identity_matrix():
    assert square_decomposition_residual(Sym2(1.0, 0.0, 1.0)) == 0.0


def test_square_decomposition_worked():
    # A = [[2,1],[1,3]]: A^2 = [[5,5],[5,10]], tr = 5, det = 5
    A = Sym2(2.0, 1.0, 3.0)
    assert A.trace == 5.0 and A.det == 5.0
    assert square_decomposition_residual(A) == 0.0
    sq = A.as_matrix() @ A.as_matrix()
    assert np.array_equal(sq, np.array([[5.0, 5.0], [5.0, 10.0]]))


def test_square_decomposition_randomized():
    rng = np.random.default_rng(20)
    a11, a12, a22 = rng.uniform(-10, 10, size=(3, 10_000))
    res = square_decomposition_residuals(a11, a12, a22)
    scale = 1.0 + a11**2 + 2 * a12**2 + a22**2
    assert np.max(res / scale) <= 1e-12


# --- sandwich identity


def test_sandwich_identity_exact_case():
    # D = I, S = [[0,1],[1,0]]: SDS = I, D:S = 0, det S = -1
    assert sandwich_identity_residual(Sym2(1.0, 0.0, 1.0), Sym2(0.0, 1.0, 0.0)) == 0.0


def test_sandwich_identity_worked_pair():
    D = Sym2(7.8, 2.4, 9.2)
    S = Sym2(2.0, 1.0, 3.0)
    assert sandwich_identity_residual(D, S) <= 1e-10
    # direct evaluation of both sides as the oracle
    Dm, Sm = D.as_matrix(), S.as_matrix()
    lhs = Sm @ Dm @ Sm
    contr = Dm[0, 0] * Sm[0, 0] + 2 * Dm[0, 1] * Sm[0, 1] + Dm[1, 1] * Sm[1, 1]
    rhs = contr * Sm - np.linalg.det(Sm) * np.linalg.det(Dm) * np.linalg.inv(Dm)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_sandwich_identity_randomized():
    rng = np.random.default_rng(21)
    n = 10_000
    theta = rng.uniform(0, np.pi, n)
    l1, l2 = np.exp(rng.uniform(np.log(0.1), np.log(10), (2, n)))
    c, s = np.cos(theta), np.sin(theta)
    d11 = c**2 * l1 + s**2 * l2
    d22 = s**2 * l1 + c**2 * l2
    d12 = c * s * (l1 - l2)
    s11, s12, s22 = rng.uniform(-10, 10, size=(3, n))
    res = sandwich_identity_residuals(d11, d12, d22, s11, s12, s22)
    dnorm = np.sqrt(d11**2 + 2 * d12**2 + d22**2)
    scale = 1.0 + dnorm * (s11**2 + 2 * s12**2 + s22**2 + np.abs(s11 * s22 - s12**2))
    assert np.max(res / scale) <= 1e-10


def test_sandwich_identity_rejects_singular():
    with pytest.raises(ValueError, match="positive-definite"):
        sandwich_identity_residual(Sym2(1.0, 1.0, 1.0), Sym2(1.0, 0.0, 1.0))


# --- Hessian reconstruction


def test_reconstruct_hessian_isotropic_quadratic():
    # D = I (zero velocity, m = 1), u = x1^2 + x2^2 at the point (0.3, 0.4)
    x1, x2 = 0.3, 0.4
    ux1, ux2 = 2 * x1, 2 * x2
    phi = ux1**2 + ux2**2
    # grad(phi) = 2 hess (D grad u) with hess = diag(2, 2), G = 0
    ws = IdentityWorkspace(
        ux1=ux1, ux2=ux2, u_t=0.0, w=-4.0, d11=1.0, d12=0.0, d22=1.0,
        phi_x1=2 * (2.0 * ux1), phi_x2=2 * (2.0 * ux2),
    )
    (h11, h12, h22), det_e = reconstruct_hessian(ws)
    assert h11 == pytest.approx(2.0, abs=1e-12)
    assert h12 == pytest.approx(0.0, abs=1e-12)
    assert h22 == pytest.approx(2.0, abs=1e-12)
    assert det_e == pytest.approx(phi, rel=1e-12)  # det(D) = 1


def test_reconstruct_hessian_det_worked():
    # the (3,4)-velocity tensor with grad u = (1, 0): phi = d11 = 7.8
    ws = IdentityWorkspace(
        ux1=1.0, ux2=0.0, u_t=0.0, w=0.0, d11=7.8, d12=2.4, d22=9.2,
        phi_x1=0.0, phi_x2=0.0,
    )
    _, det_e = reconstruct_hessian(ws)
    assert det_e == pytest.approx(66.0 * 7.8, rel=1e-10)


def test_reconstruct_hessian_vs_linear_solve():
    rng = np.random.default_rng(22)
    n = 1000
    q1, q2 = rng.uniform(-3, 3, (2, n))
    p = PhysParams(1.0, 2.0, 1.0)
    qn = np.hypot(q1, q2)
    scale = np.where(qn > 0, (p.b - p.a) / np.where(qn > 0, qn, 1.0), 0.0)
    d11 = p.a * qn + p.m + scale * q1**2
    d12 = scale * q1 * q2
    d22 = p.a * qn + p.m + scale * q2**2
    ux1 = rng.uniform(0.3, 2.0, n) * rng.choice([-1, 1], n)
    ux2 = rng.uniform(0.3, 2.0, n) * rng.choice([-1, 1], n)
    s11, s12, s22 = rng.uniform(-2, 2, (3, n))
    g1, g2 = rng.uniform(-1, 1, (2, n))
    phi = d11 * ux1**2 + 2 * d12 * ux1 * ux2 + d22 * ux2**2
    e1 = d11 * ux1 + d12 * ux2
    e2 = d12 * ux1 + d22 * ux2
    phi_x1 = 2 * (s11 * e1 + s12 * e2) + phi * g1
    phi_x2 = 2 * (s12 * e1 + s22 * e2) + phi * g2
    u_t = rng.uniform(-1, 1, n)
    w = u_t - (d11 * s11 + 2 * d12 * s12 + d22 * s22)
    ws = IdentityWorkspace(
        ux1=ux1, ux2=ux2, u_t=u_t, w=w, d11=d11, d12=d12, d22=d22,
        d11_x1=phi * g1 / ux1**2, d11_x2=phi * g2 / ux1**2,
        phi_x1=phi_x1, phi_x2=phi_x2,
    )
    (h11, h12, h22), det_e = reconstruct_hessian(ws)
    sref = np.maximum(1.0, np.abs(s11) + np.abs(s12) + np.abs(s22))
    assert np.max(np.abs(h11 - s11) / sref) < 1e-12
    assert np.max(np.abs(h12 - s12) / sref) < 1e-12
    assert np.max(np.abs(h22 - s22) / sref) < 1e-12
    E = np.zeros((n, 3, 3))
    E[:, 0, 0], E[:, 0, 1] = e1, e2
    E[:, 1, 1], E[:, 1, 2] = e1, e2
    E[:, 2, 0], E[:, 2, 1], E[:, 2, 2] = d11, 2 * d12, d22
    rhs = np.stack([(phi_x1 - phi * g1) / 2, (phi_x2 - phi * g2) / 2, u_t - w], axis=1)
    sol = np.linalg.solve(E, rhs[..., None])[..., 0]
    assert np.max(np.abs(sol[:, 0] - h11) / sref) < 1e-12
    assert np.max(np.abs(det_e - (d11 * d22 - d12**2) * phi) / ((d11 * d22 - d12**2) * phi)) < 1e-10


def test_reconstruct_hessian_requires_positive_phi():
    ws = IdentityWorkspace(ux1=0.0, ux2=0.0, u_t=0.0, w=0.0, d11=1.0, d12=0.0, d22=1.0,
                           phi_x1=0.0, phi_x2=0.0)
    with pytest.raises(ValueError, match="phi"):
        reconstruct_hessian(ws)


# --- forcing coefficients


def test_forcing_vanishes_for_constant_tensor():
    ws = IdentityWorkspace(ux1=1.0, ux2=0.5, u_t=0.0, w=0.0, d11=2.0, d12=0.3, d22=1.5)
    fc = forcing_coefficients(ws)
    for val in (fc.drift1, fc.drift2, fc.flux1, fc.flux2, fc.source):
        assert val == pytest.approx(0.0, abs=1e-15)


def test_forcing_flux_isotropic_case():
    # constant D = m I: flux_source = 2 m w grad(u) / phi exactly
    m, w = 0.7, 1.3
    ux1, ux2 = 0.8, -0.4
    ws = IdentityWorkspace(ux1=ux1, ux2=ux2, u_t=0.0, w=w, d11=m, d12=0.0, d22=m)
    fc = forcing_coefficients(ws)
    phi = m * (ux1**2 + ux2**2)
    assert fc.flux1 == pytest.approx(2 * w * m * ux1 / phi, rel=1e-14)
    assert fc.flux2 == pytest.approx(2 * w * m * ux2 / phi, rel=1e-14)


def test_forcing_condition_under_perturbation():
    rng = np.random.default_rng(23)
    base = dict(
        ux1=1.1, ux2=-0.6, u_t=0.4, w=0.2, d11=2.0, d12=0.4, d22=1.6,
        d11_x1=0.3, d12_x1=-0.1, d22_x1=0.2, d11_x2=0.1, d12_x2=0.05, d22_x2=-0.15,
        d11_t=0.02, d12_t=-0.01, d22_t=0.03,
    )
    fc0 = forcing_coefficients(IdentityWorkspace(**base))
    out0 = np.array([fc0.drift1, fc0.drift2, fc0.flux1, fc0.flux2, fc0.source])
    delta = 1e-6
    for _ in range(10):
        pert = {k: v * (1.0 + delta * rng.uniform(-1, 1)) for k, v in base.items()}
        fc = forcing_coefficients(IdentityWorkspace(**pert))
        out = np.array([fc.drift1, fc.drift2, fc.flux1, fc.flux2, fc.source])
        rel_change = np.max(np.abs(out - out0) / np.maximum(1.0, np.abs(out0)))
        assert rel_change <= 1e3 * delta
        assert np.all(np.isfinite(out))


# --- dissipation-power equation on manufactured fields


def _main_pair():
    u = lambda x1, x2, t: x1 + 0.2 * np.sin(x1 + x2) * np.exp(-t)
    v = lambda x1, x2, t: 0.1 * np.sin(np.pi * x1) * np.sin(np.pi * x2)
    return u, v


def test_power_equation_trivial():
    u = lambda x1, x2, t: 2 * x1 + x2 + 0 * t
    v = lambda x1, x2, t: np.zeros_like(x1)
    g = GridSpec(33, 33)
    _, norm = power_equation_residual(u, v, PhysParams(1, 2, 1), 1, g, dt_fd=g.hx)
    assert norm <= 1e-12


@pytest.mark.parametrize("j", [1, 2])
def test_power_equation_refinement(j):
    u, v = _main_pair()
    norms = []
    for n in (33, 65):
        g = GridSpec(n, n)
        _, norm = power_equation_residual(u, v, PhysParams(1, 2, 1), j, g, dt_fd=g.hx)
        norms.append(norm)
    assert norms[0] / norms[1] >= 3.0


def test_power_equation_time_dependent_tensor():
    u, _ = _main_pair()
    v = lambda x1, x2, t: 0.1 * np.sin(np.pi * x1) * np.sin(np.pi * x2) * (1.0 + 0.3 * np.exp(-t))
    norms = []
    for n in (33, 65):
        g = GridSpec(n, n)
        _, norm = power_equation_residual(u, v, PhysParams(1, 2, 1), 1, g, dt_fd=g.hx)
        norms.append(norm)
    assert norms[0] / norms[1] >= 3.0


def test_power_equation_rejects_flat_gradient():
    u = lambda x1, x2, t: 0.01 * np.sin(x1) + 0 * t
    v = lambda x1, x2, t: np.zeros_like(x1)
    g = GridSpec(33, 33)
    with pytest.raises(ValueError, match="grad"):
        power_equation_residual(u, v, PhysParams(1, 2, 1), 1, g, dt_fd=g.hx)


# --- vector calculus product rules


def test_product_rule_constant_vectors_trivial():
    # grad(F.G) with constant F, G: both sides vanish identically
    from dispersim.identities import deriv1_4

    g = GridSpec(17, 17)
    f1, f2, g1, g2 = 1.5, -0.5, 2.0, 3.0
    dot = np.full(g.shape, f1 * g1 + f2 * g2)
    lhs = deriv1_4(dot, g.hx, 1)
    assert np.max(np.abs(lhs)) == 0.0


def test_product_rules_refine():
    r33 = vector_calc_residuals(GridSpec(33, 33), seed=5)
    r65 = vector_calc_residuals(GridSpec(65, 65), seed=5)
    for key in r33:
        assert r33[key] / r65[key] >= 3.0, key


def test_product_rules_polynomial_exact():
    # grad(|grad u|^2) vs 2 hess(u) grad(u) for u = x1^2 + x1 x2: both sides exact
    from dispersim.identities import deriv1_4, deriv2_4

    g = GridSpec(17, 17)
    x1, x2 = g.nodes()
    u = x1**2 + x1 * x2
    hx, hy = g.hx, g.hy
    u1 = deriv1_4(u, hx, 1)
    u2 = deriv1_4(u, hy, 0)
    sq = u1**2 + u2**2
    lhs1, lhs2 = deriv1_4(sq, hx, 1), deriv1_4(sq, hy, 0)
    h11 = deriv2_4(u, hx, 1)
    h22 = deriv2_4(u, hy, 0)
    h12 = deriv1_4(deriv1_4(u, hy, 0), hx, 1)
    assert np.max(np.abs(lhs1 - 2 * (h11 * u1 + h12 * u2))) < 1e-12
    assert np.max(np.abs(lhs2 - 2 * (h12 * u1 + h22 * u2))) < 1e-12


# --- geometric recursion


def test_recursion_worked_case():
    seq, converged = superlinear_recursion(RecursionParams(1.0, 2.0, 1.0, 0.5), 60)
    assert seq[1] == 0.25 and seq[2] == 0.125 and seq[3] == 0.0625
    assert converged and seq[-1] < 1e-12
    assert recursion_threshold(1.0, 2.0, 1.0) == 0.5


def test_recursion_zero_start():
    seq, converged = superlinear_recursion(RecursionParams(1.0, 2.0, 1.0, 0.0), 20)
    assert np.all(seq == 0.0) and converged


def test_recursion_divergent_above_threshold():
    seq, converged = superlinear_recursion(RecursionParams(1.0, 2.0, 1.0, 0.6), 40)
    assert not converged
    assert seq[4] == pytest.approx(0.578, abs=1e-3)
    assert seq[5] == pytest.approx(5.34, abs=1e-2)


def test_recursion_threshold_property():
    rng = np.random.default_rng(24)
    for _ in range(200):
        c = float(np.exp(rng.uniform(np.log(0.1), np.log(10))))
        b = float(rng.uniform(1.3, 5.0))
        alpha = float(rng.uniform(0.5, 2.0))
        y0 = recursion_threshold(c, b, alpha) * rng.uniform(0, 1)
        _, converged = superlinear_recursion(RecursionParams(c, b, alpha, y0), 600)
        assert converged


def test_recursion_param_validation():
    with pytest.raises(ValueError):
        RecursionParams(1.0, 1.0, 1.0, 0.1)  # b must exceed 1
    with pytest.raises(ValueError):
        RecursionParams(-1.0, 2.0, 1.0, 0.1)


# --- log-kernel averages


def test_log_kernel_zero_field():
    g = GridSpec(65, 65)
    assert log_kernel_average(ScalarField.full(g, 0.0), 0.1, (0.5, 0.5)) == 0.0


def test_log_kernel_monotone_in_radius():
    g = GridSpec(65, 65)
    f = ScalarField.full(g, 1.0)
    e1 = log_kernel_average(f, 0.1, (0.5, 0.5))
    e2 = log_kernel_average(f, 0.05, (0.5, 0.5))
    assert 0.0 < e2 < e1


def test_log_kernel_ball_must_fit():
    g = GridSpec(33, 33)
    with pytest.raises(ValueError, match="ball"):
        log_kernel_average(ScalarField.full(g, 1.0), 0.3, (0.1, 0.5))
