"""Boundary-chart machinery: analytic diffeomorphisms, transformed equations, reflections.

A ``Chart`` carries a forward map g, its inverse f, and their analytic
derivatives.  Gradient-style matrices follow the convention

    grad_fwd(x)[i][j] = d g_j / d x_i,     grad_inv(eta)[i][j] = d f_j / d eta_i,

so chain rules read grad(v)(x) = grad_fwd(x) @ grad(v_tilde)(g(x)) and the
inverse-function identity is grad_inv(eta) @ grad_fwd(f(eta)) = I.

The transformed-equation residuals check that the flattened-coordinate
form of each equation agrees with the original-coordinate form:

* Poisson: for an analytic pair with lap(v) = u_x1 exactly, the
  transformed expression div(J^T J grad v~) + (h1, h2).q~ minus the
  transformed right-hand side is pure discretization error;
* transport: for arbitrary analytic (u, v), the flattened expression

      u~_t - (J^T D~ J) : hess(u~) - div(J^T D~ J) . grad(u~)
            - (h2, -h1) . (D~ J grad u~) + (J grad u~) . q~

  equals u_t - div(D grad u) + grad(u).q evaluated at the mapped points,
  so the finite-difference evaluation of the former minus the analytic
  value of the latter converges to zero under grid refinement.

The scalars h1, h2 absorb the second derivatives of the chart:

    h1 =  sum_k d/d eta_k [ (g-row-2 of grad_fwd) composed with f ]
    h2 = -sum_k d/d eta_k [ (g-row-1 of grad_fwd) composed with f ]

expanded through the chain rule against grad_inv; they vanish for affine
charts.  ``reflect_extend`` doubles a field across the flattening line by
even or odd reflection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import PhysParams
from .grid import GridSpec, ScalarField
from .identities import deriv1_4, deriv2_4


@dataclass(frozen=True)
class Chart:
    """Analytic diffeomorphism fixture with explicit inverse and derivatives."""

    name: str
    fwd: Callable  # (x1, x2) -> (eta1, eta2)
    inv: Callable  # (eta1, eta2) -> (x1, x2)
    grad_fwd: Callable  # (x1, x2) -> ((g1_x1, g2_x1), (g1_x2, g2_x2))
    grad_inv: Callable  # (eta1, eta2) -> ((f1_e1, f2_e1), (f1_e2, f2_e2))
    hess_fwd: Callable  # (x1, x2) -> ((g1_x1x1, g1_x1x2, g1_x2x2), (g2_x1x1, g2_x1x2, g2_x2x2))
    eta_rect: tuple[float, float, float, float] = (0.1, 0.9, 0.1, 0.9)


def identity_chart() -> Chart:
    one = lambda x1, x2: np.ones_like(np.asarray(x1, dtype=float))
    zero = lambda x1, x2: np.zeros_like(np.asarray(x1, dtype=float))
    return Chart(
        name="identity",
        fwd=lambda x1, x2: (np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)),
        inv=lambda e1, e2: (np.asarray(e1, dtype=float), np.asarray(e2, dtype=float)),
        grad_fwd=lambda x1, x2: ((one(x1, x2), zero(x1, x2)), (zero(x1, x2), one(x1, x2))),
        grad_inv=lambda e1, e2: ((one(e1, e2), zero(e1, e2)), (zero(e1, e2), one(e1, e2))),
        hess_fwd=lambda x1, x2: ((zero(x1, x2),) * 3, (zero(x1, x2),) * 3),
    )


def shear_chart(kappa: float = 0.2) -> Chart:
    one = lambda a, b: np.ones_like(np.asarray(a, dtype=float))
    zero = lambda a, b: np.zeros_like(np.asarray(a, dtype=float))
    return Chart(
        name="shear",
        fwd=lambda x1, x2: (np.asarray(x1, dtype=float), np.asarray(x2, dtype=float) + kappa * np.asarray(x1)),
        inv=lambda e1, e2: (np.asarray(e1, dtype=float), np.asarray(e2, dtype=float) - kappa * np.asarray(e1)),
        grad_fwd=lambda x1, x2: ((one(x1, x2), kappa * one(x1, x2)), (zero(x1, x2), one(x1, x2))),
        grad_inv=lambda e1, e2: ((one(e1, e2), -kappa * one(e1, e2)), (zero(e1, e2), one(e1, e2))),
        hess_fwd=lambda x1, x2: ((zero(x1, x2),) * 3, (zero(x1, x2),) * 3),
    )


def exponential_chart() -> Chart:
    def fwd(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return x1 * np.exp(x2), x2.copy()

    def inv(e1, e2):
        e1 = np.asarray(e1, dtype=float)
        e2 = np.asarray(e2, dtype=float)
        return e1 * np.exp(-e2), e2.copy()

    def grad_fwd(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        ex = np.exp(np.asarray(x2, dtype=float))
        z = np.zeros_like(ex)
        return ((ex, z), (x1 * ex, np.ones_like(ex)))

    def grad_inv(e1, e2):
        e1 = np.asarray(e1, dtype=float)
        em = np.exp(-np.asarray(e2, dtype=float))
        z = np.zeros_like(em)
        return ((em, z), (-e1 * em, np.ones_like(em)))

    def hess_fwd(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        ex = np.exp(np.asarray(x2, dtype=float))
        z = np.zeros_like(ex)
        return ((z, ex, x1 * ex), (z, z, z))

    return Chart("exponential", fwd, inv, grad_fwd, grad_inv, hess_fwd)


def builtin_charts() -> tuple[Chart, Chart, Chart]:
    return identity_chart(), shear_chart(), exponential_chart()


def _sample_points(chart: Chart, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    lo1, hi1, lo2, hi2 = chart.eta_rect
    rng = np.random.default_rng(seed)
    e1 = rng.uniform(lo1, hi1, size=n)
    e2 = rng.uniform(lo2, hi2, size=n)
    corners = np.array([[lo1, lo2], [lo1, hi2], [hi1, lo2], [hi1, hi2]])
    return np.concatenate([e1, corners[:, 0]]), np.concatenate([e2, corners[:, 1]])


def jacobian_identity_residual(chart: Chart, n_samples: int = 1000, seed: int = 0) -> float:
    """max-norm of grad_inv(eta) @ grad_fwd(f(eta)) - I over sampled chart points."""
    e1, e2 = _sample_points(chart, n_samples, seed)
    x1, x2 = chart.inv(e1, e2)
    jf = chart.grad_inv(e1, e2)
    jg = chart.grad_fwd(x1, x2)
    res = 0.0
    for i in range(2):
        for j in range(2):
            prod = jf[i][0] * jg[0][j] + jf[i][1] * jg[1][j]
            res = max(res, float(np.max(np.abs(prod - (1.0 if i == j else 0.0)))))
    return res


def det_product_residual(chart: Chart, n_samples: int = 1000, seed: int = 0) -> float:
    """max-norm of det(grad_inv)(eta) * det(grad_fwd)(f(eta)) - 1."""
    e1, e2 = _sample_points(chart, n_samples, seed)
    x1, x2 = chart.inv(e1, e2)
    jf = chart.grad_inv(e1, e2)
    jg = chart.grad_fwd(x1, x2)
    det_f = jf[0][0] * jf[1][1] - jf[0][1] * jf[1][0]
    det_g = jg[0][0] * jg[1][1] - jg[0][1] * jg[1][0]
    return float(np.max(np.abs(det_f * det_g - 1.0)))


def pushforward_gradient_residual(chart: Chart, grad_u: Callable, n_samples: int = 1000, seed: int = 0) -> float:
    """Check grad(u)(x) = grad_fwd(x) @ grad(u o f)(g(x)) for an analytic gradient.

    grad(u o f) is expanded through the chain rule with grad_inv, so the
    residual reduces to (I - grad_fwd grad_inv) grad(u) at mapped points.
    """
    e1, e2 = _sample_points(chart, n_samples, seed)
    x1, x2 = chart.inv(e1, e2)
    gu1, gu2 = grad_u(x1, x2)
    jf = chart.grad_inv(e1, e2)
    jg = chart.grad_fwd(x1, x2)
    # grad(u o f)(eta) = grad_inv(eta) @ grad(u)(f(eta))
    t1 = jf[0][0] * gu1 + jf[0][1] * gu2
    t2 = jf[1][0] * gu1 + jf[1][1] * gu2
    r1 = gu1 - (jg[0][0] * t1 + jg[0][1] * t2)
    r2 = gu2 - (jg[1][0] * t1 + jg[1][1] * t2)
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def _eta_mesh(chart: Chart, n: int):
    lo1, hi1, lo2, hi2 = chart.eta_rect
    e1 = np.linspace(lo1, hi1, n)
    e2 = np.linspace(lo2, hi2, n)
    h1 = (hi1 - lo1) / (n - 1)
    h2 = (hi2 - lo2) / (n - 1)
    E1, E2 = np.meshgrid(e1, e2)
    return E1, E2, h1, h2


def _chart_scalars(chart: Chart, E1, E2):
    """x-points, forward gradient, and flattening scalars h1, h2 on an eta mesh."""
    x1, x2 = chart.inv(E1, E2)
    jg = chart.grad_fwd(x1, x2)
    jf = chart.grad_inv(E1, E2)
    g1h, g2h = chart.hess_fwd(x1, x2)
    h1 = g1h[1] * jf[0][0] + g1h[2] * jf[0][1] + g2h[1] * jf[1][0] + g2h[2] * jf[1][1]
    h2 = -(g1h[0] * jf[0][0] + g1h[1] * jf[0][1] + g2h[0] * jf[1][0] + g2h[1] * jf[1][1])
    return x1, x2, jg, h1, h2


def _central_box(arr: np.ndarray, frac: float = 0.15) -> np.ndarray:
    n2, n1 = arr.shape
    j0, j1 = int(np.ceil(frac * (n2 - 1))), int(np.floor((1 - frac) * (n2 - 1))) + 1
    i0, i1 = int(np.ceil(frac * (n1 - 1))), int(np.floor((1 - frac) * (n1 - 1))) + 1
    return arr[j0:j1, i0:i1]


def transformed_poisson_residual(chart: Chart, v_fn: Callable, u_fn: Callable, n: int) -> tuple[np.ndarray, float]:
    """Residual of the flattened Poisson relation on an analytic exact pair.

    ``v_fn(x1, x2)`` must satisfy lap(v) = d u/d x1 exactly for ``u_fn``;
    the returned residual over the central part of the eta mesh is then
    pure finite-difference error.
    """
    E1, E2, h1m, h2m = _eta_mesh(chart, n)
    x1, x2, jg, h1, h2 = _chart_scalars(chart, E1, E2)
    vt = np.asarray(v_fn(x1, x2), dtype=float)
    ut = np.asarray(u_fn(x1, x2), dtype=float)
    vt_1 = deriv1_4(vt, h1m, axis=1)
    vt_2 = deriv1_4(vt, h2m, axis=0)
    ut_1 = deriv1_4(ut, h1m, axis=1)
    ut_2 = deriv1_4(ut, h2m, axis=0)
    # K = (grad_fwd)^T (grad_fwd) composed with f; K_ij = sum_k J_ki J_kj
    k11 = jg[0][0] ** 2 + jg[1][0] ** 2
    k12 = jg[0][0] * jg[0][1] + jg[1][0] * jg[1][1]
    k22 = jg[0][1] ** 2 + jg[1][1] ** 2
    p1 = k11 * vt_1 + k12 * vt_2
    p2 = k12 * vt_1 + k22 * vt_2
    div_p = deriv1_4(p1, h1m, axis=1) + deriv1_4(p2, h2m, axis=0)
    beta1 = jg[0][0] * vt_1 + jg[0][1] * vt_2
    beta2 = jg[1][0] * vt_1 + jg[1][1] * vt_2
    qt1, qt2 = -beta2, beta1
    rhs = ut_1 * jg[0][0] + ut_2 * jg[0][1]
    res = _central_box(div_p + h1 * qt1 + h2 * qt2 - rhs)
    return res, float(np.max(np.abs(res)))


@dataclass(frozen=True)
class TransportFields:
    """Analytic manufactured pair with every derivative the residuals need."""

    u: Callable  # (x1, x2, t)
    u_t: Callable
    u_x1: Callable
    u_x2: Callable
    u_x1x1: Callable
    u_x1x2: Callable
    u_x2x2: Callable
    v: Callable  # (x1, x2)
    v_x1: Callable
    v_x2: Callable
    v_x1x1: Callable
    v_x1x2: Callable
    v_x2x2: Callable


def default_transport_fields() -> TransportFields:
    """Polynomial pair with |q| bounded away from zero on the built-in charts."""
    return TransportFields(
        u=lambda x1, x2, t: (x1**2 + x1 * x2 / 3.0) * (1.0 + t),
        u_t=lambda x1, x2, t: x1**2 + x1 * x2 / 3.0,
        u_x1=lambda x1, x2, t: (2.0 * x1 + x2 / 3.0) * (1.0 + t),
        u_x2=lambda x1, x2, t: (x1 / 3.0) * (1.0 + t),
        u_x1x1=lambda x1, x2, t: 2.0 * (1.0 + t) * np.ones_like(x1),
        u_x1x2=lambda x1, x2, t: (1.0 + t) / 3.0 * np.ones_like(x1),
        u_x2x2=lambda x1, x2, t: np.zeros_like(x1),
        v=lambda x1, x2: (x1 * x2**2 + x1**2) / 7.0,
        v_x1=lambda x1, x2: (x2**2 + 2.0 * x1) / 7.0,
        v_x2=lambda x1, x2: 2.0 * x1 * x2 / 7.0,
        v_x1x1=lambda x1, x2: 2.0 / 7.0 * np.ones_like(x1),
        v_x1x2=lambda x1, x2: 2.0 * x2 / 7.0,
        v_x2x2=lambda x1, x2: 2.0 * x1 / 7.0,
    )


def _dispersion_entries(q1, q2, p: PhysParams):
    qn = np.hypot(q1, q2)
    iso = p.a * qn + p.m
    scale = (p.b - p.a) / qn
    return iso + scale * q1 * q1, scale * q1 * q2, iso + scale * q2 * q2


def transport_expression_x(fix: TransportFields, x1, x2, t: float, p: PhysParams) -> np.ndarray:
    """Analytic value of u_t - div(D grad u) + grad(u).q in original coordinates.

    Written in the split form u_t - D:hess(u) - div(D).grad(u) + grad(u).q;
    the tensor derivatives come from the chain rule through q.
    """
    q1 = -fix.v_x2(x1, x2)
    q2 = fix.v_x1(x1, x2)
    q1_1, q1_2 = -fix.v_x1x2(x1, x2), -fix.v_x2x2(x1, x2)
    q2_1, q2_2 = fix.v_x1x1(x1, x2), fix.v_x1x2(x1, x2)
    qn = np.hypot(q1, q2)
    d11, d12, d22 = _dispersion_entries(q1, q2, p)
    ba = p.b - p.a

    def d_entries_deriv(dq1, dq2):
        dqn = (q1 * dq1 + q2 * dq2) / qn
        dd11 = p.a * dqn + ba * (2.0 * q1 * dq1 / qn - q1 * q1 * dqn / qn**2)
        dd12 = ba * ((dq1 * q2 + q1 * dq2) / qn - q1 * q2 * dqn / qn**2)
        dd22 = p.a * dqn + ba * (2.0 * q2 * dq2 / qn - q2 * q2 * dqn / qn**2)
        return dd11, dd12, dd22

    d11_1, d12_1, d22_1 = d_entries_deriv(q1_1, q2_1)
    d11_2, d12_2, d22_2 = d_entries_deriv(q1_2, q2_2)
    div_d1 = d11_1 + d12_2
    div_d2 = d12_1 + d22_2
    ux1, ux2 = fix.u_x1(x1, x2, t), fix.u_x2(x1, x2, t)
    return (
        fix.u_t(x1, x2, t)
        - (d11 * fix.u_x1x1(x1, x2, t) + 2.0 * d12 * fix.u_x1x2(x1, x2, t) + d22 * fix.u_x2x2(x1, x2, t))
        - (div_d1 * ux1 + div_d2 * ux2)
        + (ux1 * q1 + ux2 * q2)
    )


def transport_expression_eta(chart: Chart, fix: TransportFields, n: int, t: float, p: PhysParams) -> np.ndarray:
    """Finite-difference value of the flattened transport expression on the eta mesh."""
    E1, E2, h1m, h2m = _eta_mesh(chart, n)
    x1, x2, jg, h1, h2 = _chart_scalars(chart, E1, E2)
    ut = np.asarray(fix.u(x1, x2, t), dtype=float)
    vt = np.asarray(fix.v(x1, x2), dtype=float)
    ut_1 = deriv1_4(ut, h1m, axis=1)
    ut_2 = deriv1_4(ut, h2m, axis=0)
    u_11 = deriv2_4(ut, h1m, axis=1)
    u_22 = deriv2_4(ut, h2m, axis=0)
    u_12 = deriv1_4(deriv1_4(ut, h2m, axis=0), h1m, axis=1)
    vt_1 = deriv1_4(vt, h1m, axis=1)
    vt_2 = deriv1_4(vt, h2m, axis=0)
    beta1 = jg[0][0] * vt_1 + jg[0][1] * vt_2
    beta2 = jg[1][0] * vt_1 + jg[1][1] * vt_2
    qt1, qt2 = -beta2, beta1
    d11, d12, d22 = _dispersion_entries(qt1, qt2, p)
    # T = D J (rows k), M = J^T T
    t11 = d11 * jg[0][0] + d12 * jg[1][0]
    t12 = d11 * jg[0][1] + d12 * jg[1][1]
    t21 = d12 * jg[0][0] + d22 * jg[1][0]
    t22 = d12 * jg[0][1] + d22 * jg[1][1]
    m11 = jg[0][0] * t11 + jg[1][0] * t21
    m12 = jg[0][0] * t12 + jg[1][0] * t22
    m22 = jg[0][1] * t12 + jg[1][1] * t22
    div_m1 = deriv1_4(m11, h1m, axis=1) + deriv1_4(m12, h2m, axis=0)
    div_m2 = deriv1_4(m12, h1m, axis=1) + deriv1_4(m22, h2m, axis=0)
    jgu1 = jg[0][0] * ut_1 + jg[0][1] * ut_2
    jgu2 = jg[1][0] * ut_1 + jg[1][1] * ut_2
    y1 = d11 * jgu1 + d12 * jgu2
    y2 = d12 * jgu1 + d22 * jgu2
    return (
        np.asarray(fix.u_t(x1, x2, t), dtype=float)
        - (m11 * u_11 + 2.0 * m12 * u_12 + m22 * u_22)
        - (div_m1 * ut_1 + div_m2 * ut_2)
        - (h2 * y1 - h1 * y2)
        + (jgu1 * qt1 + jgu2 * qt2)
    )


def transformed_transport_residual(
    chart: Chart, fix: TransportFields, n: int, t: float = 0.25, p: PhysParams | None = None
) -> tuple[np.ndarray, float]:
    """Flattened-minus-original transport expression; converges to zero under refinement."""
    p = p or PhysParams(1.0, 2.0, 1.0)
    E1, E2, _, _ = _eta_mesh(chart, n)
    x1, x2 = chart.inv(E1, E2)
    res = _central_box(transport_expression_eta(chart, fix, n, t, p) - transport_expression_x(fix, x1, x2, t, p))
    return res, float(np.max(np.abs(res)))


def plain_transport_residual(
    fix: TransportFields,
    n: int,
    t: float = 0.25,
    p: PhysParams | None = None,
    rect: tuple[float, float, float, float] = (0.1, 0.9, 0.1, 0.9),
) -> tuple[np.ndarray, float]:
    """Untransformed counterpart: finite differences in the original coordinates.

    Computes u_t - D:hess(u) - div(D).grad(u) + grad(u).q by finite
    differences on a uniform rectangle minus the analytic value; with the
    identity chart, ``transformed_transport_residual`` reproduces this
    field bit for bit.
    """
    p = p or PhysParams(1.0, 2.0, 1.0)
    lo1, hi1, lo2, hi2 = rect
    x1g = np.linspace(lo1, hi1, n)
    x2g = np.linspace(lo2, hi2, n)
    h1 = (hi1 - lo1) / (n - 1)
    h2 = (hi2 - lo2) / (n - 1)
    X1, X2 = np.meshgrid(x1g, x2g)
    u = np.asarray(fix.u(X1, X2, t), dtype=float)
    v = np.asarray(fix.v(X1, X2), dtype=float)
    u_1 = deriv1_4(u, h1, axis=1)
    u_2 = deriv1_4(u, h2, axis=0)
    u_11 = deriv2_4(u, h1, axis=1)
    u_22 = deriv2_4(u, h2, axis=0)
    u_12 = deriv1_4(deriv1_4(u, h2, axis=0), h1, axis=1)
    v_1 = deriv1_4(v, h1, axis=1)
    v_2 = deriv1_4(v, h2, axis=0)
    q1, q2 = -v_2, v_1
    d11, d12, d22 = _dispersion_entries(q1, q2, p)
    div_d1 = deriv1_4(d11, h1, axis=1) + deriv1_4(d12, h2, axis=0)
    div_d2 = deriv1_4(d12, h1, axis=1) + deriv1_4(d22, h2, axis=0)
    expr = (
        np.asarray(fix.u_t(X1, X2, t), dtype=float)
        - (d11 * u_11 + 2.0 * d12 * u_12 + d22 * u_22)
        - (div_d1 * u_1 + div_d2 * u_2)
        + (u_1 * q1 + u_2 * q2)
    )
    res = _central_box(expr - transport_expression_x(fix, X1, X2, t, p))
    return res, float(np.max(np.abs(res)))


# ---------------------------------------------------------------------------
# even/odd reflection across the flattening line


def reflect_extend(f: ScalarField, parity: str) -> ScalarField:
    """Extend a field given on x1 in [0, lx] to the doubled rectangle.

    The output grid has 2*nx - 1 nodes and length 2*lx in the first axis;
    the original x1 = 0 line sits at the center column (output x1 = lx).
    Even extension mirrors values, odd extension mirrors with a sign flip
    and requires a vanishing trace on the reflection line.
    """
    if parity not in ("even", "odd"):
        raise ValueError(f"parity must be 'even' or 'odd', got {parity!r}")
    g = f.grid
    if parity == "odd":
        trace = float(np.max(np.abs(f.values[:, 0])))
        if trace > 1e-12:
            raise ValueError(f"odd extension needs a zero trace on the reflection line, got {trace:.3g}")
    doubled = GridSpec(2 * g.nx - 1, g.ny, lx=2.0 * g.lx, ly=g.ly)
    out = np.empty(doubled.shape)
    out[:, g.nx - 1:] = f.values
    if parity == "even":
        out[:, : g.nx - 1] = f.values[:, :0:-1]
    else:
        out[:, : g.nx - 1] = -f.values[:, :0:-1]
        out[:, g.nx - 1] = 0.0
    return ScalarField(doubled, out)
