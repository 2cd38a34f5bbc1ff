"""Velocity and dispersion-tensor assembly.

The velocity is the rotated gradient of the stream function,
q = (-v_x2, v_x1), which makes the discrete divergence vanish at
interior nodes because the two central stencils commute.  The
dispersion tensor is

    D = (a|q| + m) I + (b - a) (q x q) / |q|,      (q x q)/|q| := 0 at q = 0,

whose eigenvalues are a|q|+m (across the flow) and b|q|+m (along it),
so det(D) = (a|q|+m)(b|q|+m).  The regularized variant replaces |q| by
sqrt(|q|^2 + eps), which is smooth in q for every eps > 0:

    D_eps = (a sqrt(|q|^2+eps) + m) I + (b - a)/sqrt(|q|^2+eps) (q x q).

``mollify`` smooths a velocity field componentwise with a compactly
supported bump kernel; near the boundary the kernel is renormalized over
in-domain nodes, which preserves constants exactly and never increases
the max-norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .grid import ScalarField, SymTensorField, VectorField, deriv1


@dataclass(frozen=True)
class PhysParams:
    """Dispersion coefficients a < b and molecular diffusivity m.

    b == a is accepted as the isotropic limit (D collapses to (a|q|+m) I).
    """

    a: float
    b: float
    m: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.m > 0):
            raise ValueError(f"a, b, m must be positive, got a={self.a}, b={self.b}, m={self.m}")
        if self.b < self.a:
            raise ValueError(f"dispersion ordering requires b > a (or b == a), got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class RegParams:
    """Tensor regularization eps and spatial mollifier support radius."""

    eps: float = 1e-6
    moll_radius: float = 0.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.moll_radius < 0:
            raise ValueError(f"moll_radius must be nonnegative, got {self.moll_radius}")


def stream_velocity(v: ScalarField) -> VectorField:
    """Rotated stream-function gradient q = (-v_x2, v_x1)."""
    g = v.grid
    return VectorField(g, -deriv1(v.values, g.hy, axis=0), deriv1(v.values, g.hx, axis=1))


def divergence(q: VectorField) -> ScalarField:
    g = q.grid
    return ScalarField(g, deriv1(q.comp1, g.hx, axis=1) + deriv1(q.comp2, g.hy, axis=0))


def bump_kernel(radius: float, hx: float, hy: float) -> np.ndarray:
    """Compactly supported smooth bump exp(-1/(1-|z|^2/r^2)) sampled on the node lattice.

    Returned unnormalized; callers renormalize discretely.
    """
    ki = int(np.ceil(radius / hx))
    kj = int(np.ceil(radius / hy))
    di = np.arange(-ki, ki + 1) * hx
    dj = np.arange(-kj, kj + 1) * hy
    s = (dj[:, None] ** 2 + di[None, :] ** 2) / radius**2
    k = np.zeros_like(s)
    inside = s < 1.0
    k[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return k


def _mollify_values(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    num = convolve2d(values, kernel, mode="same", boundary="fill")
    den = convolve2d(np.ones_like(values), kernel, mode="same", boundary="fill")
    return num / den


def mollify(q: VectorField, radius: float) -> VectorField:
    """Componentwise convolution with the normalized bump of the given radius."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    g = q.grid
    if radius > 0.5 * min(g.lx, g.ly):
        raise ValueError(f"mollifier radius {radius} exceeds half the domain size")
    if radius == 0.0:
        return VectorField(g, q.comp1.copy(), q.comp2.copy())
    kernel = bump_kernel(radius, g.hx, g.hy)
    return VectorField(g, _mollify_values(q.comp1, kernel), _mollify_values(q.comp2, kernel))


def dispersion_tensor(q: VectorField, p: PhysParams) -> SymTensorField:
    """Velocity-dependent dispersion tensor with the exact branch at q = 0."""
    qn = q.magnitude()
    iso = p.a * qn + p.m
    nonzero = qn > 0.0
    scale = np.zeros_like(qn)
    np.divide(p.b - p.a, qn, out=scale, where=nonzero)
    d11 = iso + scale * q.comp1**2
    d12 = scale * q.comp1 * q.comp2
    d22 = iso + scale * q.comp2**2
    return SymTensorField(q.grid, d11, d12, d22)


def dispersion_tensor_regularized(q_eps: VectorField, p: PhysParams, r: RegParams) -> SymTensorField:
    qreg = np.sqrt(q_eps.comp1**2 + q_eps.comp2**2 + r.eps)
    iso = p.a * qreg + p.m
    scale = (p.b - p.a) / qreg
    d11 = iso + scale * q_eps.comp1**2
    d12 = scale * q_eps.comp1 * q_eps.comp2
    d22 = iso + scale * q_eps.comp2**2
    return SymTensorField(q_eps.grid, d11, d12, d22)


def eigen_bounds(q: VectorField, p: PhysParams) -> tuple[ScalarField, ScalarField]:
    """Per-node eigenvalues of the dispersion tensor: (a|q|+m, b|q|+m)."""
    qn = q.magnitude()
    return ScalarField(q.grid, p.a * qn + p.m), ScalarField(q.grid, p.b * qn + p.m)
