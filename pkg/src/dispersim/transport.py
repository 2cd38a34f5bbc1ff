"""Implicit transport of the density u coupled to the stream-function Poisson solve.

One time step solves, by a fixed-point (Picard) iteration mirroring the
coupling of the continuous problem,

    lap(v) = u_x1,  v = 0 on the boundary,
    q = (-v_x2, v_x1),
    (u_new - u_old)/dt = div(D_eps grad u_new) - div(u_new q),

with zero total flux (diffusive co-normal plus advective) through every
boundary face.  The spatial scheme is a node-centered finite-volume
discretization: cells are the trapezoidal-weight boxes around each node,
diffusive fluxes use face-averaged tensor entries including the d12
cross term, and advective fluxes are upwinded by the sign of the face
flux.

When the stream function is available (the coupled path always passes
it), advective face fluxes are exact line integrals of q through the
face, computed as differences of vertex-averaged stream values.  Those
fluxes telescope to zero around every cell, so constants are exact
steady states and the advective matrix is an M-matrix contribution; with
a diagonal tensor this makes the step satisfy a discrete maximum
principle.  Mass conservation is structural: every interior face
contributes equal and opposite amounts to its two cells and boundary
faces contribute nothing, so the cell-weighted sum of u (the trapezoidal
integral) is conserved to the linear-solver floor.  The inner solver is
BiCGSTAB with an incomplete-LU preconditioner, polished by iterative
refinement toward machine-level residuals so solver error never shows up
in the conservation diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import (
    PhysParams,
    RegParams,
    dispersion_tensor_regularized,
    mollify,
    stream_velocity,
)
from .elliptic import PoissonSolver, SolverError
from .grid import (
    GridSpec,
    ScalarField,
    SymTensorField,
    VectorField,
    deriv1,
    diff_x1,
    integrate,
    read_snapshot,
    write_snapshot,
)

DIAGNOSTIC_COLUMNS = (
    "step", "t", "umax", "umin", "mass", "l2sq", "energy_dissip",
    "grad_sup", "phi_max", "ut_sup", "picard_iters", "picard_gap", "mass_drift",
)


@dataclass
class SimState:
    u: ScalarField
    v: ScalarField
    q: VectorField
    q_eps: VectorField
    D_eps: SymTensorField
    t: float
    step: int


@dataclass
class StepReport:
    picard_iterations: int
    picard_gap: float
    linear_residual: float
    mass_drift: float
    picard_gap_history: list[float] = field(default_factory=list)


@dataclass
class RunConfig:
    grid: GridSpec
    phys: PhysParams
    reg: RegParams
    dt: float
    t_end: float
    picard_tol: float = 1e-10
    picard_max: int = 30
    lin_tol: float = 1e-10
    lin_max: int = 5000
    ic: str = "gaussian"
    ic_params: str = ""
    output_every: int = 0
    outdir: str = ""

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < self.dt:
            raise ValueError(f"t_end must be at least dt, got t_end={self.t_end}, dt={self.dt}")
        if not (self.picard_tol > 0 and self.lin_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.picard_max < 1 or self.lin_max < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.output_every < 0:
            raise ValueError("output_every must be nonnegative")


@dataclass
class DiagnosticsRow:
    step: int
    t: float
    umax: float
    umin: float
    mass: float
    l2sq: float
    energy_dissip: float
    grad_sup: float
    phi_max: float
    ut_sup: float
    picard_iters: int
    picard_gap: float
    mass_drift: float


@dataclass
class Trajectory:
    config: RunConfig
    states: list[SimState]
    reports: list[StepReport]
    diagnostics: list[DiagnosticsRow]

    @property
    def final(self) -> SimState:
        return self.states[-1]


# ---------------------------------------------------------------------------
# initial conditions


def _parse_params(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"malformed ic parameter {part!r}, expected name=value")
        key, val = part.split("=", 1)
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise ValueError(f"ic parameter {key.strip()!r} has non-numeric value {val!r}") from exc
    return out


def initial_condition(ic: str, ic_params: str, grid: GridSpec) -> ScalarField:
    """Evaluate a smooth preset, or load a snapshot CSV validated against the grid."""
    name = ic.strip().lower()
    params = _parse_params(ic_params)
    x1, x2 = grid.nodes()

    def take(defaults: dict[str, float]) -> dict[str, float]:
        unknown = set(params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown ic parameters for {name!r}: {sorted(unknown)}")
        merged = dict(defaults)
        merged.update(params)
        return merged

    if name == "constant":
        p = take({"value": 1.0})
        return ScalarField.full(grid, p["value"])
    if name in ("gaussian", "gaussian-bump"):
        p = take({"amplitude": 1.0, "cx": grid.lx / 2.0, "cy": grid.ly / 2.0, "width": 0.1})
        r2 = (x1 - p["cx"]) ** 2 + (x2 - p["cy"]) ** 2
        return ScalarField(grid, p["amplitude"] * np.exp(-r2 / (2.0 * p["width"] ** 2)))
    if name == "stripe":
        p = take({"amplitude": 1.0, "cx": grid.lx / 2.0, "width": 0.1})
        return ScalarField(grid, p["amplitude"] * np.exp(-((x1 - p["cx"]) ** 2) / (2.0 * p["width"] ** 2)))
    if name in ("checker", "cosine-checker"):
        p = take({"amplitude": 1.0, "kx": 1.0, "ky": 1.0})
        return ScalarField(
            grid,
            p["amplitude"] * np.cos(p["kx"] * np.pi * x1 / grid.lx) * np.cos(p["ky"] * np.pi * x2 / grid.ly),
        )
    # anything else is a snapshot path
    path = Path(ic)
    if not path.exists():
        raise ValueError(f"unknown ic preset or missing file: {ic!r}")
    return read_snapshot(path, grid)


# ---------------------------------------------------------------------------
# finite-volume step


def _face_fluxes_from_stream(v: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Advective face fluxes as stream-value differences between face endpoints.

    Vertex values are 4-node averages; endpoints on the boundary use the
    exact Dirichlet value 0.  The four fluxes around any cell then sum to
    zero up to rounding, and boundary-normal fluxes vanish identically.
    """
    vh = 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])
    ny, nx = grid.shape
    fe = np.empty((ny, nx - 1))
    fe[1:-1, :] = vh[:-1, :] - vh[1:, :]
    fe[0, :] = -vh[0, :]
    fe[-1, :] = vh[-1, :]
    fn = np.empty((ny - 1, nx))
    fn[:, 1:-1] = vh[:, 1:] - vh[:, :-1]
    fn[:, 0] = vh[:, 0]
    fn[:, -1] = -vh[:, -1]
    return fe, fn


def _face_fluxes_from_q(q: VectorField, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Fallback advective fluxes from face-averaged node velocities."""
    ny, nx = grid.shape
    cy = np.ones(ny)
    cy[0] = cy[-1] = 0.5
    cx = np.ones(nx)
    cx[0] = cx[-1] = 0.5
    fe = 0.5 * (q.comp1[:, :-1] + q.comp1[:, 1:]) * (grid.hy * cy)[:, None]
    fn = 0.5 * (q.comp2[:-1, :] + q.comp2[1:, :]) * (grid.hx * cx)[None, :]
    return fe, fn


class _Coo:
    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, rows, cols, vals):
        r, c, v = np.broadcast_arrays(rows, cols, vals)
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.asarray(v, dtype=float).ravel())

    def add_pair(self, rows_plus, rows_minus, cols, vals):
        """Scatter +vals into rows_plus and the exact negation into rows_minus."""
        self.add(rows_plus, cols, vals)
        self.add(rows_minus, cols, -np.asarray(vals, dtype=float))

    def matrix(self, n: int) -> sp.csr_matrix:
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _assemble_parabolic(
    grid: GridSpec, D: SymTensorField, fe: np.ndarray, fn: np.ndarray, dt: float
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Backward-Euler finite-volume matrix; rhs is cell_weights/dt * u_old."""
    ny, nx = grid.shape
    hx, hy = grid.hx, grid.hy
    idx = np.arange(ny * nx).reshape(ny, nx)
    cy = np.ones(ny)
    cy[0] = cy[-1] = 0.5
    cx = np.ones(nx)
    cx[0] = cx[-1] = 0.5
    coo = _Coo()

    # --- vertical faces between (i, j) and (i+1, j)
    P = idx[:, :-1]
    E = idx[:, 1:]
    area = (hy * cy)[:, None] * np.ones((1, nx - 1))
    d11f = 0.5 * (D.d11[:, :-1] + D.d11[:, 1:])
    d12f = 0.5 * (D.d12[:, :-1] + D.d12[:, 1:])
    cn = area * d11f / hx
    # normal flux -cn (uE - uP): row P gains +cn uP - cn uE, row E the negation
    coo.add_pair(P, E, P, cn)
    coo.add_pair(E, P, E, cn)
    # cross term: flux -= area * d12f * (face-averaged transverse derivative)
    cfd = area * d12f / (4.0 * hy)
    Pj = P[1:-1, :]
    Ej = E[1:-1, :]
    cj = cfd[1:-1, :]
    for di, sign in ((1, 1.0), (-1, -1.0)):
        for shift in (0, 1):
            cols = idx[1 + di:ny - 1 + di, shift:nx - 1 + shift]
            coo.add_pair(Pj, Ej, cols, -cj * sign)
    # one-sided transverse derivative at j = 0 and j = ny-1 face rows
    for jrow, coeffs in ((0, ((0, -3.0), (1, 4.0), (2, -1.0))), (ny - 1, ((ny - 1, 3.0), (ny - 2, -4.0), (ny - 3, 1.0)))):
        for jj, wgt in coeffs:
            for shift in (0, 1):
                cols = idx[jj, shift:nx - 1 + shift]
                coo.add_pair(P[jrow, :], E[jrow, :], cols, -cfd[jrow, :] * wgt)
    # advective upwind
    up = np.where(fe >= 0.0, P, E)
    coo.add_pair(P, E, up, fe)

    # --- horizontal faces between (i, j) and (i, j+1)
    P = idx[:-1, :]
    N = idx[1:, :]
    area = np.ones((ny - 1, 1)) * (hx * cx)[None, :]
    d22f = 0.5 * (D.d22[:-1, :] + D.d22[1:, :])
    d12f = 0.5 * (D.d12[:-1, :] + D.d12[1:, :])
    cn = area * d22f / hy
    coo.add_pair(P, N, P, cn)
    coo.add_pair(N, P, N, cn)
    cfd = area * d12f / (4.0 * hx)
    Pi = P[:, 1:-1]
    Ni = N[:, 1:-1]
    ci = cfd[:, 1:-1]
    for di, sign in ((1, 1.0), (-1, -1.0)):
        for shift in (0, 1):
            cols = idx[shift:ny - 1 + shift, 1 + di:nx - 1 + di]
            coo.add_pair(Pi, Ni, cols, -ci * sign)
    for icol, coeffs in ((0, ((0, -3.0), (1, 4.0), (2, -1.0))), (nx - 1, ((nx - 1, 3.0), (nx - 2, -4.0), (nx - 3, 1.0)))):
        for ii, wgt in coeffs:
            for shift in (0, 1):
                cols = idx[shift:ny - 1 + shift, ii]
                coo.add_pair(P[:, icol], N[:, icol], cols, -cfd[:, icol] * wgt)
    up = np.where(fn >= 0.0, P, N)
    coo.add_pair(P, N, up, fn)

    w = grid.cell_weights()
    A = coo.matrix(ny * nx) + sp.diags(w.ravel() / dt, format="csr")
    return A, w


def parabolic_step(
    u_old: ScalarField,
    D: SymTensorField,
    q: VectorField,
    dt: float,
    stream: ScalarField | None = None,
    lin_tol: float = 1e-10,
    lin_max: int = 5000,
) -> tuple[ScalarField, float]:
    """One backward-Euler step in conservative flux form.

    ``stream`` supplies the stream function whose rotated gradient is q;
    when given, advective face fluxes are exact stream differences (the
    coupled solver always passes it).  Without it the fluxes fall back to
    face-averaged node velocities, which conserves mass structurally but
    preserves constants only up to discretization error at boundary cells.

    Returns the new field and the relative residual of the linear solve.
    """
    grid = u_old.grid
    if stream is not None:
        fe, fn = _face_fluxes_from_stream(stream.values, grid)
    else:
        fe, fn = _face_fluxes_from_q(q, grid)
    A, w = _assemble_parabolic(grid, D, fe, fn, dt)
    b = (w / dt).ravel() * u_old.values.ravel()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return ScalarField(grid, np.zeros(grid.shape)), 0.0

    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20.0)
    except RuntimeError as exc:
        raise SolverError(f"incomplete factorization failed: {exc}") from exc
    M = spla.LinearOperator(A.shape, ilu.solve)
    x, _ = spla.bicgstab(A, b, x0=u_old.values.ravel().copy(), rtol=1e-14, atol=0.0, maxiter=lin_max, M=M)
    # polish toward machine-level residual so conservation is solver-noise free
    for _ in range(3):
        r = b - A @ x
        if float(np.linalg.norm(r)) <= 1e-14 * bnorm:
            break
        dx, _ = spla.bicgstab(A, r, rtol=1e-6, atol=0.0, maxiter=200, M=M)
        x = x + dx
    if not np.all(np.isfinite(x)):
        raise SolverError("transport solve produced non-finite values")
    rel = float(np.linalg.norm(b - A @ x)) / bnorm
    if rel > lin_tol:
        raise SolverError(f"transport linear solve stalled at relative residual {rel:.3e} > {lin_tol:.1e}")
    return ScalarField(grid, x.reshape(grid.shape)), rel


# ---------------------------------------------------------------------------
# coupled stepping


def _coupled_fields(u: ScalarField, cfg: RunConfig, poisson: PoissonSolver, v_start=None):
    v, rep = poisson.solve(diff_x1(u), tol=cfg.lin_tol, max_iter=cfg.lin_max, x0=v_start)
    if not rep.converged:
        raise SolverError(
            f"stream-function solve did not converge: residual {rep.residual_norm:.3e} after {rep.iterations} iterations"
        )
    q = stream_velocity(v)
    q_eps = mollify(q, cfg.reg.moll_radius)
    D_eps = dispersion_tensor_regularized(q_eps, cfg.phys, cfg.reg)
    return v, q, q_eps, D_eps


def initial_state(cfg: RunConfig, poisson: PoissonSolver | None = None) -> SimState:
    poisson = poisson or PoissonSolver(cfg.grid)
    u0 = initial_condition(cfg.ic, cfg.ic_params, cfg.grid)
    v, q, q_eps, D_eps = _coupled_fields(u0, cfg, poisson)
    return SimState(u0, v, q, q_eps, D_eps, t=0.0, step=0)


def picard_coupled_step(
    state: SimState, cfg: RunConfig, poisson: PoissonSolver | None = None, dt: float | None = None
) -> tuple[SimState, StepReport]:
    """Advance one time step, iterating the elliptic/coefficient/parabolic loop.

    Each inner pass re-solves the parabolic step from the same u_old with the
    latest coefficients, until the max-norm change between successive inner
    iterates drops below picard_tol.  The returned state's v, q and tensor are
    refreshed from the accepted u, so its elliptic residual is below lin_tol.
    """
    poisson = poisson or PoissonSolver(cfg.grid)
    dt = cfg.dt if dt is None else dt
    u_n = state.u
    mass_old = integrate(u_n)
    u_k = u_n
    v_start = state.v.values
    gaps: list[float] = []
    lin_res = 0.0
    converged = False
    for _ in range(cfg.picard_max):
        v_k, q_k, q_eps_k, D_eps_k = _coupled_fields(u_k, cfg, poisson, v_start=v_start)
        v_start = v_k.values
        u_next, lin_res = parabolic_step(
            u_n, D_eps_k, q_k, dt, stream=v_k, lin_tol=cfg.lin_tol, lin_max=cfg.lin_max
        )
        gap = float(np.max(np.abs(u_next.values - u_k.values)))
        gaps.append(gap)
        u_k = u_next
        if gap <= cfg.picard_tol:
            converged = True
            break
    if not converged:
        raise SolverError(
            f"fixed-point iteration stalled after {cfg.picard_max} passes, last gap {gaps[-1]:.3e}"
        )
    v_f, q_f, q_eps_f, D_eps_f = _coupled_fields(u_k, cfg, poisson, v_start=v_start)
    mass_new = integrate(u_k)
    report = StepReport(
        picard_iterations=len(gaps),
        picard_gap=gaps[-1],
        linear_residual=lin_res,
        mass_drift=(mass_new - mass_old) / max(abs(mass_old), 1e-300),
        picard_gap_history=gaps,
    )
    new_state = SimState(u_k, v_f, q_f, q_eps_f, D_eps_f, t=state.t + dt, step=state.step + 1)
    return new_state, report


def state_consistency_residual(state: SimState, poisson: PoissonSolver | None = None) -> float:
    """Residual of the state's stream function against its own density field."""
    poisson = poisson or PoissonSolver(state.u.grid)
    return poisson.residual_norm(state.v, diff_x1(state.u))


# ---------------------------------------------------------------------------
# trajectories and diagnostics


def _grad_and_phi(state: SimState) -> tuple[float, float]:
    u = state.u
    g1 = deriv1(u.values, u.grid.hx, axis=1)
    g2 = deriv1(u.values, u.grid.hy, axis=0)
    grad_sup = float(np.max(np.hypot(g1, g2)))
    phi = state.D_eps.quad_form(g1, g2)
    return grad_sup, float(np.max(phi))


def _dissipation(state: SimState) -> float:
    u = state.u
    g1 = deriv1(u.values, u.grid.hx, axis=1)
    g2 = deriv1(u.values, u.grid.hy, axis=0)
    return integrate(ScalarField(u.grid, state.D_eps.quad_form(g1, g2)))


def _diag_row(state: SimState, report: StepReport | None, prev_u: ScalarField | None,
              dt: float, cum_dissip: float, mass0: float) -> DiagnosticsRow:
    u = state.u
    grad_sup, phi_max = _grad_and_phi(state)
    mass = integrate(u)
    ut_sup = 0.0
    if prev_u is not None:
        ut_sup = float(np.max(np.abs(u.values - prev_u.values))) / dt
    return DiagnosticsRow(
        step=state.step,
        t=state.t,
        umax=float(np.max(u.values)),
        umin=float(np.min(u.values)),
        mass=mass,
        l2sq=integrate(ScalarField(u.grid, u.values**2)),
        energy_dissip=cum_dissip,
        grad_sup=grad_sup,
        phi_max=phi_max,
        ut_sup=ut_sup,
        picard_iters=report.picard_iterations if report else 0,
        picard_gap=report.picard_gap if report else 0.0,
        mass_drift=(mass - mass0) / max(abs(mass0), 1e-300),
    )


def _format_row(row: DiagnosticsRow) -> str:
    vals = [
        str(row.step), format(row.t, ".17g"), format(row.umax, ".17g"), format(row.umin, ".17g"),
        format(row.mass, ".17g"), format(row.l2sq, ".17g"), format(row.energy_dissip, ".17g"),
        format(row.grad_sup, ".17g"), format(row.phi_max, ".17g"), format(row.ut_sup, ".17g"),
        str(row.picard_iters), format(row.picard_gap, ".17g"), format(row.mass_drift, ".17g"),
    ]
    return ",".join(vals)


def run(cfg: RunConfig, outdir: str | Path | None = None) -> Trajectory:
    """March from the initial condition to t_end; optionally persist artifacts.

    The run directory receives diagnostics.csv (one row per step, written
    incrementally so aborted runs keep their partial history), snapshot
    CSVs of u and v at step 0, every ``output_every`` steps (0 disables
    intermediate snapshots) and the final step, plus the resolved
    configuration.  Identical configurations produce bit-identical
    artifacts.
    """
    target = Path(outdir) if outdir else (Path(cfg.outdir) if cfg.outdir else None)
    poisson = PoissonSolver(cfg.grid)
    state = initial_state(cfg, poisson)
    mass0 = integrate(state.u)

    n_exact = round(cfg.t_end / cfg.dt)
    if abs(n_exact * cfg.dt - cfg.t_end) <= 1e-9 * cfg.t_end:
        step_sizes = [cfg.dt] * n_exact
    else:
        n = int(math.ceil(cfg.t_end / cfg.dt))
        step_sizes = [cfg.dt] * (n - 1) + [cfg.t_end - (n - 1) * cfg.dt]
    n_steps = len(step_sizes)

    diag_file = None
    if target:
        target.mkdir(parents=True, exist_ok=True)
        from .config import serialize_config

        (target / "resolved.cfg").write_text(serialize_config(cfg))
        diag_file = open(target / "diagnostics.csv", "w")
        diag_file.write(",".join(DIAGNOSTIC_COLUMNS) + "\n")

    def snap(st: SimState):
        if target:
            write_snapshot(st.u, target / f"u_{st.step:06d}.csv")
            write_snapshot(st.v, target / f"v_{st.step:06d}.csv")

    rows = [_diag_row(state, None, None, cfg.dt, 0.0, mass0)]
    states = [state]
    reports: list[StepReport] = []
    cum_dissip = 0.0
    try:
        if diag_file:
            diag_file.write(_format_row(rows[0]) + "\n")
            diag_file.flush()
        snap(state)
        for k, dt in enumerate(step_sizes):
            prev_u = state.u
            state, report = picard_coupled_step(state, cfg, poisson, dt=dt)
            cum_dissip += dt * _dissipation(state)
            row = _diag_row(state, report, prev_u, dt, cum_dissip, mass0)
            rows.append(row)
            reports.append(report)
            if diag_file:
                diag_file.write(_format_row(row) + "\n")
                diag_file.flush()
            is_last = k == n_steps - 1
            if is_last or (cfg.output_every > 0 and state.step % cfg.output_every == 0):
                snap(state)
                states.append(state)
    finally:
        if diag_file:
            diag_file.close()
    return Trajectory(cfg, states, reports, rows)
