"""Numerical verification of the algebraic structure behind the coupled system.

This module checks, on manufactured data, every identity the simulator's
analysis rests on:

* the trace/determinant decomposition  A^2 = tr(A) A - det(A) I  of a
  symmetric 2x2 matrix;
* the sandwich identity  S D S = (D:S) S - det(S) det(D) D^{-1}  for
  symmetric S and invertible symmetric D, with the contracted product
  D:S = d11 s11 + 2 d12 s12 + d22 s22;
* closed-form reconstruction of the Hessian of u from first-order data.
  With phi = D grad(u).grad(u) and G = (D_x1 grad(u).grad(u),
  D_x2 grad(u).grad(u)) / phi, the Hessian solves the 3x3 linear system

      e1 u_11 + e2 u_12 = (phi_x1 - phi g1)/2
      e1 u_12 + e2 u_22 = (phi_x2 - phi g2)/2
      d11 u_11 + 2 d12 u_12 + d22 u_22 = u_t - w,

  where (e1, e2) = D grad(u) and w = u_t - D:hess(u); the system matrix
  has determinant det(D) * phi, and Cramer's rule gives the closed forms
  implemented in ``reconstruct_hessian``;
* the parabolic equation satisfied by the j-th power psi = phi^j of the
  dissipation density wherever grad(u) does not vanish:

      psi_t / psi - div((1/psi) D grad(psi))
          = drift . grad(psi) / psi + j * source + j * div(flux_source),

  with the drift/source/flux_source coefficients assembled by
  ``forcing_coefficients`` from D, its derivatives, grad(u), u_t and w;
* elementary vector-calculus product rules on matching stencils;
* the geometric-decay recursion y_{n+1} = c b^n y_n^{1+alpha}, which
  drives every level-set truncation argument, with its smallness
  threshold y_0 <= c^{-1/alpha} b^{-1/alpha^2};
* log-kernel averages eta(f; r) = sup_x integral over a ball of
  |f(y)| |ln|x-y|| dy, the quantity controlling local boundedness.

Stencils here are fourth-order in space (one-sided closures at the
boundary keep the order uniform) so identity residuals decay fast enough
to be separated from rounding at desk-scale grids.  Time derivatives of
manufactured fields use second-order central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import PhysParams
from .grid import GridSpec, ScalarField

# ---------------------------------------------------------------------------
# fourth-order finite differences with one-sided boundary closures


def deriv1_4(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order first derivative along an axis (5-point one-sided at edges)."""
    if axis == 0:
        return deriv1_4(values.T, h, 1).T
    v = values
    if v.shape[1] < 5:
        raise ValueError("need at least 5 nodes per axis for fourth-order stencils")
    s = 1.0 / (12.0 * h)
    out = np.empty_like(v)
    out[:, 2:-2] = (v[:, :-4] - 8.0 * v[:, 1:-3] + 8.0 * v[:, 3:-1] - v[:, 4:]) * s
    out[:, 0] = (-25.0 * v[:, 0] + 48.0 * v[:, 1] - 36.0 * v[:, 2] + 16.0 * v[:, 3] - 3.0 * v[:, 4]) * s
    out[:, 1] = (-3.0 * v[:, 0] - 10.0 * v[:, 1] + 18.0 * v[:, 2] - 6.0 * v[:, 3] + v[:, 4]) * s
    out[:, -2] = (3.0 * v[:, -1] + 10.0 * v[:, -2] - 18.0 * v[:, -3] + 6.0 * v[:, -4] - v[:, -5]) * s
    out[:, -1] = (25.0 * v[:, -1] - 48.0 * v[:, -2] + 36.0 * v[:, -3] - 16.0 * v[:, -4] + 3.0 * v[:, -5]) * s
    return out


def deriv2_4(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order second derivative along an axis (6-point one-sided at edges)."""
    if axis == 0:
        return deriv2_4(values.T, h, 1).T
    v = values
    if v.shape[1] < 6:
        raise ValueError("need at least 6 nodes per axis for fourth-order stencils")
    s = 1.0 / (12.0 * h * h)
    out = np.empty_like(v)
    out[:, 2:-2] = (-v[:, :-4] + 16.0 * v[:, 1:-3] - 30.0 * v[:, 2:-2] + 16.0 * v[:, 3:-1] - v[:, 4:]) * s
    out[:, 0] = (45.0 * v[:, 0] - 154.0 * v[:, 1] + 214.0 * v[:, 2] - 156.0 * v[:, 3] + 61.0 * v[:, 4] - 10.0 * v[:, 5]) * s
    out[:, 1] = (10.0 * v[:, 0] - 15.0 * v[:, 1] - 4.0 * v[:, 2] + 14.0 * v[:, 3] - 6.0 * v[:, 4] + v[:, 5]) * s
    out[:, -2] = (10.0 * v[:, -1] - 15.0 * v[:, -2] - 4.0 * v[:, -3] + 14.0 * v[:, -4] - 6.0 * v[:, -5] + v[:, -6]) * s
    out[:, -1] = (45.0 * v[:, -1] - 154.0 * v[:, -2] + 214.0 * v[:, -3] - 156.0 * v[:, -4] + 61.0 * v[:, -5] - 10.0 * v[:, -6]) * s
    return out


# ---------------------------------------------------------------------------
# pointwise 2x2 matrix identities


@dataclass(frozen=True)
class Sym2:
    """One symmetric 2x2 matrix."""

    a11: float
    a12: float
    a22: float

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12**2


def square_decomposition_residuals(a11, a12, a22) -> np.ndarray:
    """Entrywise residual of A^2 - tr(A) A + det(A) I, vectorized over entries."""
    tr = a11 + a22
    det = a11 * a22 - a12 * a12
    r11 = a11 * a11 + a12 * a12 - tr * a11 + det
    r12 = a12 * (a11 + a22) - tr * a12
    r22 = a12 * a12 + a22 * a22 - tr * a22 + det
    return np.maximum(np.abs(r11), np.maximum(np.abs(r12), np.abs(r22)))


def square_decomposition_residual(A: Sym2) -> float:
    return float(square_decomposition_residuals(A.a11, A.a12, A.a22))


def sandwich_identity_residuals(d11, d12, d22, s11, s12, s22) -> np.ndarray:
    """Entrywise residual of S D S - (D:S) S + det(S) det(D) D^{-1}, vectorized.

    det(D) D^{-1} is the adjugate [[d22, -d12], [-d12, d11]], so no division
    by det(D) occurs; callers enforce invertibility.
    """
    t11 = s11 * d11 + s12 * d12
    t12 = s11 * d12 + s12 * d22
    t21 = s12 * d11 + s22 * d12
    t22 = s12 * d12 + s22 * d22
    m11 = t11 * s11 + t12 * s12
    m12 = t11 * s12 + t12 * s22
    m22 = t21 * s12 + t22 * s22
    c = d11 * s11 + 2.0 * d12 * s12 + d22 * s22
    det_s = s11 * s22 - s12 * s12
    r11 = m11 - c * s11 + det_s * d22
    r12 = m12 - c * s12 - det_s * d12
    r22 = m22 - c * s22 + det_s * d11
    return np.maximum(np.abs(r11), np.maximum(np.abs(r12), np.abs(r22)))


def sandwich_identity_residual(D: Sym2, S: Sym2) -> float:
    if not D.det > 0:
        raise ValueError(f"D must be symmetric positive-definite, got det(D) = {D.det}")
    return float(sandwich_identity_residuals(D.a11, D.a12, D.a22, S.a11, S.a12, S.a22))


# ---------------------------------------------------------------------------
# per-node workspace for the dissipation-density machinery


@dataclass
class IdentityWorkspace:
    """Per-node values feeding the Hessian reconstruction and forcing assembly.

    Every field is a float or an ndarray; all entries broadcast together.
    Spatial/temporal derivative entries describe the same tensor D whose
    entries are (d11, d12, d22); ``w`` must equal u_t - D:hess(u) for the
    identities to close.
    """

    ux1: np.ndarray
    ux2: np.ndarray
    u_t: np.ndarray
    w: np.ndarray
    d11: np.ndarray
    d12: np.ndarray
    d22: np.ndarray
    d11_x1: np.ndarray = 0.0
    d12_x1: np.ndarray = 0.0
    d22_x1: np.ndarray = 0.0
    d11_x2: np.ndarray = 0.0
    d12_x2: np.ndarray = 0.0
    d22_x2: np.ndarray = 0.0
    d11_t: np.ndarray = 0.0
    d12_t: np.ndarray = 0.0
    d22_t: np.ndarray = 0.0
    phi_x1: np.ndarray | None = None
    phi_x2: np.ndarray | None = None

    @property
    def phi(self):
        return self.d11 * self.ux1**2 + 2.0 * self.d12 * self.ux1 * self.ux2 + self.d22 * self.ux2**2

    @property
    def e1(self):
        return self.d11 * self.ux1 + self.d12 * self.ux2

    @property
    def e2(self):
        return self.d12 * self.ux1 + self.d22 * self.ux2

    @property
    def det_d(self):
        return self.d11 * self.d22 - self.d12**2

    @property
    def det_d_x1(self):
        return self.d11_x1 * self.d22 + self.d11 * self.d22_x1 - 2.0 * self.d12 * self.d12_x1

    @property
    def det_d_x2(self):
        return self.d11_x2 * self.d22 + self.d11 * self.d22_x2 - 2.0 * self.d12 * self.d12_x2

    @property
    def div_d(self):
        """Row vector of column divergences of D."""
        return (self.d11_x1 + self.d12_x2, self.d12_x1 + self.d22_x2)

    @property
    def g(self):
        """Relative-gradient vector of D along grad(u): G = (D_xk grad u . grad u)/phi."""
        phi = self.phi
        g1 = (self.d11_x1 * self.ux1**2 + 2.0 * self.d12_x1 * self.ux1 * self.ux2 + self.d22_x1 * self.ux2**2) / phi
        g2 = (self.d11_x2 * self.ux1**2 + 2.0 * self.d12_x2 * self.ux1 * self.ux2 + self.d22_x2 * self.ux2**2) / phi
        return g1, g2

    def _aux_matrices(self):
        """The three matrices entering the adjugate representation of hess(u).

        M1 and M2 collect products of D-entries with grad(u); M3 is the
        negative outer product of D grad(u) with itself.
        """
        d11, d12, d22 = self.d11, self.d12, self.d22
        ux1, ux2 = self.ux1, self.ux2
        e1, e2 = self.e1, self.e2
        cross = d22 * d11 - 2.0 * d12**2
        m1 = ((d11 * e1, d12 * d11 * ux1 - cross * ux2),
              (d11 * e2, d22 * e1))
        m2 = ((d11 * e2, d22 * e1),
              (-cross * ux1 + d12 * d22 * ux2, d22 * e2))
        m3 = (-e1 * e1, -e1 * e2, -e2 * e2)
        return m1, m2, m3


def reconstruct_hessian(ws: IdentityWorkspace):
    """Closed-form Hessian of u from first-order data, plus the system determinant.

    Returns ((u11, u12, u22), det_e) where det_e is the determinant of the
    assembled 3x3 system matrix, computed independently so callers can check
    it against det(D) * phi.
    """
    phi = np.asarray(ws.phi, dtype=float)
    if np.any(phi <= 0):
        raise ValueError("dissipation density phi must be positive for the reconstruction")
    det_d = np.asarray(ws.det_d, dtype=float)
    if np.any(det_d <= 0):
        raise ValueError("tensor must be positive-definite (det(D) > 0)")
    if ws.phi_x1 is None or ws.phi_x2 is None:
        raise ValueError("reconstruction needs the gradient of phi (phi_x1, phi_x2)")
    g1, g2 = ws.g
    p1 = ws.phi_x1 - phi * g1
    p2 = ws.phi_x2 - phi * g2
    r3 = ws.u_t - ws.w
    d11, d12, d22 = ws.d11, ws.d12, ws.d22
    e1, e2 = ws.e1, ws.e2
    cross = d22 * d11 - 2.0 * d12**2
    denom = det_d * phi
    u11 = ((cross * ws.ux1 - d12 * d22 * ws.ux2) * p1 - d22 * e2 * p2) / (2.0 * denom) + r3 * e2**2 / denom
    u12 = (d11 * e2 * p1 + d22 * e1 * p2) / (2.0 * denom) - r3 * e1 * e2 / denom
    u22 = -(d11 * e1 * p1 + (d12 * d11 * ws.ux1 - cross * ws.ux2) * p2) / (2.0 * denom) + r3 * e1**2 / denom

    e_mat = np.zeros(np.broadcast(e1, d22).shape + (3, 3))
    e_mat[..., 0, 0] = e1
    e_mat[..., 0, 1] = e2
    e_mat[..., 1, 1] = e1
    e_mat[..., 1, 2] = e2
    e_mat[..., 2, 0] = d11
    e_mat[..., 2, 1] = 2.0 * d12
    e_mat[..., 2, 2] = d22
    det_e = np.linalg.det(e_mat)
    return (u11, u12, u22), det_e


@dataclass
class ForcingCoefficients:
    """Coefficients of the derived parabolic equation for psi = phi^j.

    ``drift`` multiplies grad(psi)/psi, ``source`` and ``flux_source``
    enter scaled by j as  j*source + j*div(flux_source).
    """

    drift1: np.ndarray
    drift2: np.ndarray
    flux1: np.ndarray
    flux2: np.ndarray
    source: np.ndarray


def forcing_coefficients(ws: IdentityWorkspace) -> ForcingCoefficients:
    """Assemble the drift vector, flux-source vector and scalar source.

    The scalar source keeps its two sign-definite terms; nothing is dropped.
    """
    phi = ws.phi
    det_d = ws.det_d
    if np.any(np.asarray(phi) <= 0) or np.any(np.asarray(det_d) <= 0):
        raise ValueError("forcing coefficients need phi > 0 and det(D) > 0")
    g1, g2 = ws.g
    dg1 = ws.d11 * g1 + ws.d12 * g2
    dg2 = ws.d12 * g1 + ws.d22 * g2
    e1, e2 = ws.e1, ws.e2
    dd1, dd2 = ws.det_d_x1, ws.det_d_x2
    m1, m2, m3 = ws._aux_matrices()

    # drift = D G + (2 u_t / phi) D grad u - (1/(det(D) phi)) [M1^T dd, M2^T dd] grad u
    c1_1 = m1[0][0] * dd1 + m1[1][0] * dd2
    c1_2 = m1[0][1] * dd1 + m1[1][1] * dd2
    c2_1 = m2[0][0] * dd1 + m2[1][0] * dd2
    c2_2 = m2[0][1] * dd1 + m2[1][1] * dd2
    denom = det_d * phi
    drift1 = dg1 + 2.0 * ws.u_t * e1 / phi - (ws.ux1 * c1_1 + ws.ux2 * c2_1) / denom
    drift2 = dg2 + 2.0 * ws.u_t * e2 / phi - (ws.ux1 * c1_2 + ws.ux2 * c2_2) / denom

    flux1 = -dg1 + 2.0 * ws.w * e1 / phi
    flux2 = -dg2 + 2.0 * ws.w * e2 / phi

    m1g1 = m1[0][0] * g1 + m1[0][1] * g2
    m1g2 = m1[1][0] * g1 + m1[1][1] * g2
    m2g1 = m2[0][0] * g1 + m2[0][1] * g2
    m2g2 = m2[1][0] * g1 + m2[1][1] * g2
    mg1 = ws.ux1 * m1g1 + ws.ux2 * m2g1
    mg2 = ws.ux1 * m1g2 + ws.ux2 * m2g2
    m3u1 = m3[0] * ws.ux1 + m3[1] * ws.ux2
    m3u2 = m3[1] * ws.ux1 + m3[2] * ws.ux2
    div_d1, div_d2 = ws.div_d
    dt_quad = ws.d11_t * ws.ux1**2 + 2.0 * ws.d12_t * ws.ux1 * ws.ux2 + ws.d22_t * ws.ux2**2
    r3 = ws.u_t - ws.w
    source = (
        (dd1 * mg1 + dd2 * mg2) / denom
        - 2.0 * r3 * (dd1 * m3u1 + dd2 * m3u2) / (denom * phi)
        - 2.0 * ws.u_t * (ws.u_t + div_d1 * ws.ux1 + div_d2 * ws.ux2 - ws.w) / phi
        + dt_quad / phi
        - 2.0 * r3 * (e1 * g1 + e2 * g2) / phi
        - (dg1 * g1 + dg2 * g2)
    )
    return ForcingCoefficients(drift1, drift2, flux1, flux2, source)


# ---------------------------------------------------------------------------
# manufactured-field residual of the dissipation-power equation


def _regularized_tensor_entries(q1, q2, p: PhysParams, reg_eps: float):
    qreg = np.sqrt(q1 * q1 + q2 * q2 + reg_eps)
    iso = p.a * qreg + p.m
    scale = (p.b - p.a) / qreg
    return iso + scale * q1 * q1, scale * q1 * q2, iso + scale * q2 * q2


def power_equation_residual(
    u_fn,
    v_fn,
    params: PhysParams,
    j: int,
    grid: GridSpec,
    dt_fd: float,
    t0: float = 0.25,
    reg_eps: float = 1e-2,
    sub_rect: tuple[float, float, float, float] = (0.25, 0.75, 0.25, 0.75),
    grad_floor: float = 0.5,
) -> tuple[np.ndarray, float]:
    """Residual of the parabolic equation for psi = phi^j on manufactured fields.

    ``u_fn(x1, x2, t)`` and ``v_fn(x1, x2, t)`` are smooth manufactured
    fields; nothing is solved.  The velocity is the rotated gradient of v,
    the tensor uses the eps-regularized profile (smooth in q, so the
    identity holds for arbitrary manufactured v, including fields whose
    velocity vanishes somewhere), and w is defined as u_t - D:hess(u) so
    the identity is exact in the continuum.  The returned residual over
    the evaluation sub-rectangle is therefore pure discretization error:
    fourth order in space, second order in the time differences.

    Raises ValueError if |grad u| falls below ``grad_floor`` anywhere on
    the sub-rectangle (the identity only holds away from critical points).
    """
    if j < 1:
        raise ValueError("power j must be >= 1")
    if dt_fd <= 0:
        raise ValueError("dt_fd must be positive")
    hx, hy = grid.hx, grid.hy
    x1m, x2m = grid.nodes()

    slices = {}
    for tag, t in (("-", t0 - dt_fd), ("0", t0), ("+", t0 + dt_fd)):
        u = np.asarray(u_fn(x1m, x2m, t), dtype=float)
        v = np.asarray(v_fn(x1m, x2m, t), dtype=float)
        q1 = -deriv1_4(v, hy, axis=0)
        q2 = deriv1_4(v, hx, axis=1)
        d11, d12, d22 = _regularized_tensor_entries(q1, q2, params, reg_eps)
        ux1 = deriv1_4(u, hx, axis=1)
        ux2 = deriv1_4(u, hy, axis=0)
        phi = d11 * ux1**2 + 2.0 * d12 * ux1 * ux2 + d22 * ux2**2
        slices[tag] = dict(u=u, d11=d11, d12=d12, d22=d22, ux1=ux1, ux2=ux2, phi=phi, psi=phi**j)

    s0, sm, sp = slices["0"], slices["-"], slices["+"]
    inv2dt = 1.0 / (2.0 * dt_fd)
    u_t = (sp["u"] - sm["u"]) * inv2dt
    u11 = deriv2_4(s0["u"], hx, axis=1)
    u22 = deriv2_4(s0["u"], hy, axis=0)
    u12 = deriv1_4(deriv1_4(s0["u"], hy, axis=0), hx, axis=1)
    w = u_t - (s0["d11"] * u11 + 2.0 * s0["d12"] * u12 + s0["d22"] * u22)

    ws = IdentityWorkspace(
        ux1=s0["ux1"], ux2=s0["ux2"], u_t=u_t, w=w,
        d11=s0["d11"], d12=s0["d12"], d22=s0["d22"],
        d11_x1=deriv1_4(s0["d11"], hx, 1), d12_x1=deriv1_4(s0["d12"], hx, 1), d22_x1=deriv1_4(s0["d22"], hx, 1),
        d11_x2=deriv1_4(s0["d11"], hy, 0), d12_x2=deriv1_4(s0["d12"], hy, 0), d22_x2=deriv1_4(s0["d22"], hy, 0),
        d11_t=(sp["d11"] - sm["d11"]) * inv2dt,
        d12_t=(sp["d12"] - sm["d12"]) * inv2dt,
        d22_t=(sp["d22"] - sm["d22"]) * inv2dt,
    )
    fc = forcing_coefficients(ws)

    psi = s0["psi"]
    psi_t = (sp["psi"] - sm["psi"]) * inv2dt
    psi_x1 = deriv1_4(psi, hx, axis=1)
    psi_x2 = deriv1_4(psi, hy, axis=0)
    p1 = (s0["d11"] * psi_x1 + s0["d12"] * psi_x2) / psi
    p2 = (s0["d12"] * psi_x1 + s0["d22"] * psi_x2) / psi
    lhs = psi_t / psi - (deriv1_4(p1, hx, axis=1) + deriv1_4(p2, hy, axis=0))
    div_flux = deriv1_4(fc.flux1, hx, axis=1) + deriv1_4(fc.flux2, hy, axis=0)
    rhs = (fc.drift1 * psi_x1 + fc.drift2 * psi_x2) / psi + j * fc.source + j * div_flux

    ilo = int(np.ceil(sub_rect[0] * (grid.nx - 1)))
    ihi = int(np.floor(sub_rect[1] * (grid.nx - 1))) + 1
    jlo = int(np.ceil(sub_rect[2] * (grid.ny - 1)))
    jhi = int(np.floor(sub_rect[3] * (grid.ny - 1))) + 1
    grad_mag = np.hypot(s0["ux1"], s0["ux2"])[jlo:jhi, ilo:ihi]
    if grad_mag.min() < grad_floor:
        raise ValueError(
            f"|grad u| dips to {grad_mag.min():.3g} < {grad_floor} on the evaluation sub-rectangle"
        )
    res = (lhs - rhs)[jlo:jhi, ilo:ihi]
    return res, float(np.max(np.abs(res)))


# ---------------------------------------------------------------------------
# vector-calculus product rules on matching stencils


def _random_smooth(grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
    x1m, x2m = grid.nodes()
    out = np.zeros(grid.shape)
    for _ in range(3):
        a1, a2 = rng.uniform(0.5, 2.0, size=2)
        ph1, ph2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
        c = rng.uniform(-1.0, 1.0)
        out += c * np.sin(a1 * np.pi * x1m / grid.lx + ph1) * np.cos(a2 * np.pi * x2m / grid.ly + ph2)
    return out


def vector_calc_residuals(grid: GridSpec, seed: int = 0) -> dict[str, float]:
    """Max-norm residuals of the product-rule identities on random smooth fields.

    Both sides of each identity are evaluated with the same fourth-order
    stencils, so each residual is pure discretization error, O(h^4).
    """
    rng = np.random.default_rng(seed)
    hx, hy = grid.hx, grid.hy

    def d1(v):
        return deriv1_4(v, hx, axis=1)

    def d2(v):
        return deriv1_4(v, hy, axis=0)

    f1, f2 = _random_smooth(grid, rng), _random_smooth(grid, rng)
    g1, g2 = _random_smooth(grid, rng), _random_smooth(grid, rng)
    a11, a12, a22 = _random_smooth(grid, rng), _random_smooth(grid, rng), _random_smooth(grid, rng)
    u = _random_smooth(grid, rng)
    out: dict[str, float] = {}

    # grad(F.G) = grad(F) G + grad(G) F, with grad(F)_{ij} = d_i F_j
    dot = f1 * g1 + f2 * g2
    lhs1, lhs2 = d1(dot), d2(dot)
    rhs1 = d1(f1) * g1 + d1(f2) * g2 + d1(g1) * f1 + d1(g2) * f2
    rhs2 = d2(f1) * g1 + d2(f2) * g2 + d2(g1) * f1 + d2(g2) * f2
    out["grad-of-dot"] = float(max(np.max(np.abs(lhs1 - rhs1)), np.max(np.abs(lhs2 - rhs2))))

    # div(A F) = A : grad(F) + div(A) . F
    af1 = a11 * f1 + a12 * f2
    af2 = a12 * f1 + a22 * f2
    lhs = d1(af1) + d2(af2)
    contr = a11 * d1(f1) + a12 * d1(f2) + a12 * d2(f1) + a22 * d2(f2)
    diva1, diva2 = d1(a11) + d2(a12), d1(a12) + d2(a22)
    out["div-of-matvec"] = float(np.max(np.abs(lhs - (contr + diva1 * f1 + diva2 * f2))))

    # grad(A F) = grad(F) A^T + (A_x1 F, A_x2 F)^T, entry (i, j) = d_i (A F)_j
    res = 0.0
    d_ops = (d1, d2)
    da = {(1, 1, 1): d1(a11), (1, 2, 1): d1(a12), (2, 2, 1): d1(a22),
          (1, 1, 2): d2(a11), (1, 2, 2): d2(a12), (2, 2, 2): d2(a22)}

    def a_entry(r, c):
        return a11 if (r, c) == (1, 1) else a22 if (r, c) == (2, 2) else a12

    def da_entry(r, c, k):
        key = (min(r, c), max(r, c), k)
        return da[key]

    af = (af1, af2)
    fve = (f1, f2)
    for i in (1, 2):
        for jj in (1, 2):
            lhs_ij = d_ops[i - 1](af[jj - 1])
            rhs_ij = sum(d_ops[i - 1](fve[k - 1]) * a_entry(jj, k) for k in (1, 2))
            rhs_ij = rhs_ij + sum(da_entry(jj, k, i) * fve[k - 1] for k in (1, 2))
            res = max(res, float(np.max(np.abs(lhs_ij - rhs_ij))))
    out["grad-of-matvec"] = res

    # div(u A) = u div(A) + grad(u)^T A  (row-vector identity)
    res = 0.0
    for jj in (1, 2):
        lhs_j = d1(u * a_entry(1, jj)) + d2(u * a_entry(2, jj))
        rhs_j = u * (diva1 if jj == 1 else diva2) + d1(u) * a_entry(1, jj) + d2(u) * a_entry(2, jj)
        res = max(res, float(np.max(np.abs(lhs_j - rhs_j))))
    out["div-of-scaled-matrix"] = res

    # grad(|grad u|^2) = 2 hess(u) grad(u)
    u1, u2 = d1(u), d2(u)
    sq = u1 * u1 + u2 * u2
    h11 = deriv2_4(u, hx, axis=1)
    h22 = deriv2_4(u, hy, axis=0)
    h12 = d1(d2(u))
    r1 = d1(sq) - 2.0 * (h11 * u1 + h12 * u2)
    r2 = d2(sq) - 2.0 * (h12 * u1 + h22 * u2)
    out["grad-of-grad-square"] = float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))
    return out


# ---------------------------------------------------------------------------
# geometric-decay recursion


@dataclass(frozen=True)
class RecursionParams:
    """Parameters of y_{n+1} = c b^n y_n^{1+alpha}."""

    c: float
    b: float
    alpha: float
    y0: float

    def __post_init__(self):
        if not (self.c > 0 and self.alpha > 0):
            raise ValueError("c and alpha must be positive")
        if not self.b > 1:
            raise ValueError(f"b must exceed 1, got {self.b}")
        if self.y0 < 0:
            raise ValueError("y0 must be nonnegative")


def recursion_threshold(c: float, b: float, alpha: float) -> float:
    """Largest starting value guaranteed to drive the recursion to zero."""
    return c ** (-1.0 / alpha) * b ** (-1.0 / alpha**2)


def superlinear_recursion(p: RecursionParams, n_max: int) -> tuple[np.ndarray, bool]:
    """Iterate the recursion with equality; converged means y_{n_max} < 1e-12.

    The sequence is capped at 1e100: once exceeded it is reported as
    diverged and iteration stops.  When the geometric factor b^n alone
    would overflow the update switches to log space, so deep decaying
    tails underflow cleanly to zero instead of raising.
    """
    ys = [p.y0]
    y = p.y0
    log_b, log_c = math.log(p.b), math.log(p.c)
    for n in range(n_max):
        if y == 0.0:
            ys.append(0.0)
            continue
        log_next = log_c + n * log_b + (1.0 + p.alpha) * math.log(y)
        if log_next > math.log(1e100):
            ys.append(math.inf)
            return np.array(ys), False
        if n * log_b < 700.0:
            y = p.c * p.b**n * y ** (1.0 + p.alpha)
        else:
            y = math.exp(log_next) if log_next > -745.0 else 0.0
        ys.append(y)
        if y > 1e100:
            return np.array(ys), False
    return np.array(ys), bool(ys[-1] < 1e-12)


# ---------------------------------------------------------------------------
# log-kernel ball averages


def _log_cell_integral(hx: float, hy: float) -> float:
    """Integral of |ln r| over the cell [-hx/2, hx/2] x [-hy/2, hy/2] around the singularity."""
    X, Y = hx / 2.0, hy / 2.0
    if np.hypot(X, Y) >= 1.0:
        raise ValueError("cell too large for the log-kernel sign convention")
    corner = (X * Y / 2.0) * np.log(X * X + Y * Y) - 1.5 * X * Y \
        + (Y * Y / 2.0) * np.arctan(X / Y) + (X * X / 2.0) * np.arctan(Y / X)
    return -4.0 * corner


def log_kernel_average(f: ScalarField, radius: float, center: tuple[float, float]) -> float:
    """sup over nearby nodes x of the ball integral of |f(y)| |ln|x-y|| dy.

    Quadrature assigns each ball node its cell area; the singular node is
    integrated analytically over its own cell.  The sup is taken over grid
    nodes within twice the radius of the ball center, so the result is a
    lower bound for the true supremum over the plane.
    """
    g = f.grid
    cx, cy = center
    if radius <= 0:
        raise ValueError("radius must be positive")
    if cx - radius < 0 or cx + radius > g.lx or cy - radius < 0 or cy + radius > g.ly:
        raise ValueError("ball exits the domain")
    x1m, x2m = g.nodes()
    ball = (x1m - cx) ** 2 + (x2m - cy) ** 2 <= radius**2
    ys1 = x1m[ball]
    ys2 = x2m[ball]
    fv = np.abs(f.values[ball])
    area = g.hx * g.hy
    self_term = _log_cell_integral(g.hx, g.hy)

    near = (x1m - cx) ** 2 + (x2m - cy) ** 2 <= (2.0 * radius) ** 2
    xs1 = x1m[near]
    xs2 = x2m[near]
    best = 0.0
    chunk = 256
    for start in range(0, xs1.size, chunk):
        c1 = xs1[start:start + chunk][:, None]
        c2 = xs2[start:start + chunk][:, None]
        d = np.hypot(ys1[None, :] - c1, ys2[None, :] - c2)
        singular = d == 0.0
        kern = np.zeros_like(d)
        np.log(d, out=kern, where=~singular)
        np.abs(kern, out=kern)
        vals = (fv[None, :] * kern).sum(axis=1) * area
        vals += (fv[None, :] * singular).sum(axis=1) * self_term
        best = max(best, float(vals.max()))
    return best
