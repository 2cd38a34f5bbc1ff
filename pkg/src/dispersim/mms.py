"""Manufactured-solution and self-convergence studies.

The Poisson study solves lap(v) = -2 pi^2 sin(pi x1) sin(pi x2) against the
known solution across a ladder of grids and reports the observed order as
the least-squares slope of log(error) vs log(h); the 5-point stencil gives
slope 2.  The coupled study measures the temporal order of the full
nonlinear march by Richardson self-comparison: the run is repeated with
dt, dt/2, dt/4, ... on a fixed grid and successive final states are
differenced; backward Euler gives order 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .elliptic import PoissonSolver
from .grid import GridSpec, ScalarField
from .transport import RunConfig, run


@dataclass
class ConvergenceLevel:
    label: str
    h: float
    error: float
    order: float  # vs the previous level; nan on the first


def poisson_convergence(levels: int = 4, n0: int = 17) -> tuple[list[ConvergenceLevel], float]:
    if levels < 2:
        raise ValueError("need at least 2 levels")
    rows: list[ConvergenceLevel] = []
    hs, errs = [], []
    n = n0
    for k in range(levels):
        g = GridSpec(n, n)
        x1, x2 = g.nodes()
        exact = np.sin(np.pi * x1) * np.sin(np.pi * x2)
        rhs = ScalarField(g, -2.0 * np.pi**2 * exact)
        v, rep = PoissonSolver(g).solve(rhs, tol=1e-12, max_iter=20000)
        if not rep.converged:
            raise RuntimeError(f"poisson solve failed to converge at {n}x{n}")
        err = float(np.max(np.abs(v.values - exact)))
        order = float("nan") if not rows else float(np.log2(rows[-1].error / err))
        rows.append(ConvergenceLevel(f"{n}x{n}", g.hx, err, order))
        hs.append(g.hx)
        errs.append(err)
        n = 2 * n - 1
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    return rows, slope


def coupled_time_convergence(
    levels: int = 3, n: int = 33, base: RunConfig | None = None
) -> tuple[list[ConvergenceLevel], float]:
    """Temporal self-convergence of the coupled march under dt halving."""
    if levels < 2:
        raise ValueError("need at least 2 levels")
    if base is None:
        from .acceptance import reference_config

        base = reference_config(n=n, t_end=0.125)
        base = replace(base, dt=1.0 / (n - 1) / 2.0)
    finals = []
    dts = []
    for k in range(levels):
        dt = base.dt / 2**k
        tr = run(replace(base, dt=dt))
        finals.append(tr.final.u.values)
        dts.append(dt)
    rows: list[ConvergenceLevel] = []
    diffs = []
    for k in range(levels - 1):
        d = float(np.max(np.abs(finals[k] - finals[k + 1])))
        diffs.append(d)
        order = float("nan") if k == 0 else float(np.log2(diffs[k - 1] / d))
        rows.append(ConvergenceLevel(f"dt={dts[k]:.6g} vs dt/2", dts[k], d, order))
    if len(diffs) >= 2:
        slope = float(np.polyfit(np.log(dts[: len(diffs)]), np.log(diffs), 1)[0])
    else:
        slope = float("nan")
    return rows, slope


def format_convergence_table(rows: list[ConvergenceLevel], slope: float) -> str:
    lines = [f"{'level':<22}{'h':>12}{'error':>14}{'order':>8}"]
    for r in rows:
        order = "" if np.isnan(r.order) else f"{r.order:.3f}"
        lines.append(f"{r.label:<22}{r.h:>12.6g}{r.error:>14.4e}{order:>8}")
    lines.append(f"observed order (least squares): {slope:.4f}" if np.isfinite(slope) else "observed order: n/a")
    return "\n".join(lines)
