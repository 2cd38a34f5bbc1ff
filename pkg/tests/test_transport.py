import numpy as np
import pytest

from dispersim.coefficients import (
    PhysParams,
    RegParams,
    dispersion_tensor_regularized,
    stream_velocity,
)
from dispersim.elliptic import PoissonSolver, SolverError
from dispersim.grid import GridSpec, ScalarField, VectorField, integrate, read_snapshot, write_snapshot
from dispersim.transport import (
    RunConfig,
    initial_condition,
    initial_state,
    parabolic_step,
    picard_coupled_step,
    run,
    state_consistency_residual,
)


def _grid(n=33):
    return GridSpec(n, n)


def _stream_setup(g, amp=0.3, phys=PhysParams(1.0, 2.0, 0.5)):
    x1, x2 = g.nodes()
    v = ScalarField(g, amp * np.sin(np.pi * x1) * np.sin(np.pi * x2))
    q = stream_velocity(v)
    D = dispersion_tensor_regularized(q, phys, RegParams(1e-6))
    return v, q, D


def _cfg(n=33, a=1.0, b=2.0, m=0.5, t_end=0.0625, **kw):
    g = _grid(n)
    defaults = dict(
        grid=g, phys=PhysParams(a, b, m), reg=RegParams(), dt=g.hx, t_end=t_end,
        ic="gaussian", ic_params="amplitude=1,width=0.1",
    )
    defaults.update(kw)
    return RunConfig(**defaults)


# --- initial conditions


def test_ic_constant():
    f = initial_condition("constant", "value=2", _grid(9))
    assert np.all(f.values == 2.0)


def test_ic_gaussian_peak_at_center_node():
    g = _grid(17)  # 0.5 is a node
    f = initial_condition("gaussian", "amplitude=1", g)
    assert np.max(f.values) == 1.0
    assert f.values[8, 8] == 1.0


def test_ic_rejects_unknown_params():
    with pytest.raises(ValueError, match="unknown ic parameter"):
        initial_condition("gaussian", "radius=1", _grid(9))


def test_ic_csv_roundtrip(tmp_path):
    g = _grid(9)
    rng = np.random.default_rng(0)
    f = ScalarField(g, rng.standard_normal(g.shape))
    path = tmp_path / "ic.csv"
    write_snapshot(f, path)
    back = initial_condition(str(path), "", g)
    assert np.array_equal(back.values, f.values)


def test_ic_missing_file():
    with pytest.raises(ValueError, match="unknown ic preset"):
        initial_condition("no-such-thing", "", _grid(9))


# --- parabolic step


def test_constant_preserved_with_stream_fluxes():
    g = _grid(33)
    v, q, D = _stream_setup(g)
    u0 = ScalarField.full(g, 3.0)
    u1, rel = parabolic_step(u0, D, q, dt=0.02, stream=v)
    assert np.max(np.abs(u1.values - 3.0)) < 1e-12
    assert rel < 1e-10


def test_constant_approximate_without_stream():
    # face-averaged fallback: constants survive only to discretization error
    g = _grid(33)
    v, q, D = _stream_setup(g)
    u0 = ScalarField.full(g, 3.0)
    u1, _ = parabolic_step(u0, D, q, dt=0.02)
    assert np.max(np.abs(u1.values - 3.0)) < 5e-3
    assert np.max(np.abs(u1.values - 3.0)) > 0.0


def test_mass_conserved_any_inputs():
    g = _grid(33)
    rng = np.random.default_rng(1)
    v, q, D = _stream_setup(g, amp=0.5, phys=PhysParams(0.5, 3.0, 1.0))
    for _ in range(3):
        u0 = ScalarField(g, rng.uniform(-1.0, 2.0, g.shape))
        u1, _ = parabolic_step(u0, D, q, dt=0.03, stream=v)
        m0, m1 = integrate(u0), integrate(u1)
        assert abs(m1 - m0) <= 1e-11 * max(1.0, abs(m0))


def test_isotropic_heat_step_max_principle():
    g = _grid(33)
    rng = np.random.default_rng(2)
    qz = VectorField(g, np.zeros(g.shape), np.zeros(g.shape))
    D = dispersion_tensor_regularized(qz, PhysParams(1.0, 1.0, 0.5), RegParams(1e-6))
    u0 = ScalarField(g, rng.uniform(-1.0, 1.0, g.shape))
    u1, _ = parabolic_step(u0, D, qz, dt=0.05)
    assert np.max(u1.values) <= np.max(u0.values) + 1e-10
    assert np.min(u1.values) >= np.min(u0.values) - 1e-10


# --- finite-volume operator consistency


def test_fv_cross_term_exact_on_bilinear():
    # constant pure-cross tensor, u = x1 x2: the operator must produce
    # -(d12 u_21 + d12 u_12) = -2 exactly away from the boundary rows
    from dispersim.grid import SymTensorField
    from dispersim.transport import _assemble_parabolic

    g = GridSpec(9, 9)
    x1, x2 = g.nodes()
    u = x1 * x2
    D = SymTensorField(g, np.zeros(g.shape), np.ones(g.shape), np.zeros(g.shape))
    fe = np.zeros((g.ny, g.nx - 1))
    fn = np.zeros((g.ny - 1, g.nx))
    A, w = _assemble_parabolic(g, D, fe, fn, dt=1.0)
    r = ((A @ u.ravel()).reshape(g.shape) - w * u) / w
    assert np.max(np.abs(r[2:-2, 2:-2] + 2.0)) < 1e-12


def test_fv_diffusion_consistency_second_order():
    # smooth (well-regularized) full tensor: cell residual vs a fourth-order
    # reference of -div(D grad u) must shrink at second order
    from dispersim.identities import deriv1_4
    from dispersim.transport import _assemble_parabolic

    def error(n):
        g = GridSpec(n, n)
        x1, x2 = g.nodes()
        u = np.sin(1.3 * x1 + 0.4) * np.cos(0.9 * x2 + 0.2)
        v = ScalarField(g, 0.5 * np.sin(np.pi * x1) * np.sin(np.pi * x2))
        D = dispersion_tensor_regularized(stream_velocity(v), PhysParams(1.0, 2.0, 0.5), RegParams(0.5))
        fe = np.zeros((g.ny, g.nx - 1))
        fn = np.zeros((g.ny - 1, g.nx))
        A, w = _assemble_parabolic(g, D, fe, fn, dt=1.0)
        r = ((A @ u.ravel()).reshape(g.shape) - w * u) / w
        u1, u2 = deriv1_4(u, g.hx, 1), deriv1_4(u, g.hy, 0)
        f1 = D.d11 * u1 + D.d12 * u2
        f2 = D.d12 * u1 + D.d22 * u2
        ref = -(deriv1_4(f1, g.hx, 1) + deriv1_4(f2, g.hy, 0))
        return np.max(np.abs(r - ref)[2:-2, 2:-2])

    errs = [error(n) for n in (33, 65, 129)]
    assert errs[0] / errs[1] >= 3.0
    assert errs[1] / errs[2] >= 3.0


def test_fv_advection_consistency_first_order():
    from dispersim.grid import SymTensorField
    from dispersim.identities import deriv1_4
    from dispersim.transport import _assemble_parabolic, _face_fluxes_from_stream

    def error(n):
        g = GridSpec(n, n)
        x1, x2 = g.nodes()
        u = np.sin(1.3 * x1 + 0.4) * np.cos(0.9 * x2 + 0.2)
        vs = ScalarField(g, 0.5 * np.sin(np.pi * x1) * np.sin(np.pi * x2))
        q = stream_velocity(vs)
        D0 = SymTensorField(g, np.zeros(g.shape), np.zeros(g.shape), np.zeros(g.shape))
        fe, fn = _face_fluxes_from_stream(vs.values, g)
        A, w = _assemble_parabolic(g, D0, fe, fn, dt=1.0)
        r = ((A @ u.ravel()).reshape(g.shape) - w * u) / w
        ref = deriv1_4(u * q.comp1, g.hx, 1) + deriv1_4(u * q.comp2, g.hy, 0)
        return np.max(np.abs(r - ref)[2:-2, 2:-2])

    errs = [error(n) for n in (65, 129)]
    assert 1.5 <= errs[0] / errs[1] <= 2.6  # upwinding is first order


# --- coupled stepping


def test_constant_state_is_fixed_point():
    cfg = _cfg(ic="constant", ic_params="value=2")
    ps = PoissonSolver(cfg.grid)
    st = initial_state(cfg, ps)
    st2, rep = picard_coupled_step(st, cfg, ps)
    assert rep.picard_iterations == 1
    assert np.max(np.abs(st2.u.values - st.u.values)) < 1e-12
    assert st2.step == st.step + 1
    assert st2.t == pytest.approx(st.t + cfg.dt)


def test_picard_gap_decreases_monotonically():
    cfg = _cfg()
    ps = PoissonSolver(cfg.grid)
    st = initial_state(cfg, ps)
    _, rep = picard_coupled_step(st, cfg, ps)
    gaps = rep.picard_gap_history
    assert len(gaps) >= 3
    assert all(gaps[k + 1] <= gaps[k] for k in range(len(gaps) - 1))


def test_halving_dt_roughly_halves_first_gap():
    # smooth data and small dt keep the first step out of the stiff regime,
    # where the O(dt) scaling of the first inner update is visible
    cfg = _cfg(ic="checker", ic_params="amplitude=0.5", dt=1.0 / 128, t_end=1.0)
    ps = PoissonSolver(cfg.grid)
    st = initial_state(cfg, ps)
    _, rep1 = picard_coupled_step(st, cfg, ps, dt=1.0 / 128)
    _, rep2 = picard_coupled_step(st, cfg, ps, dt=1.0 / 256)
    ratio = rep1.picard_gap_history[0] / rep2.picard_gap_history[0]
    assert 1.5 <= ratio <= 2.5


def test_picard_stall_raises():
    cfg = _cfg(picard_tol=1e-16, picard_max=2)
    ps = PoissonSolver(cfg.grid)
    st = initial_state(cfg, ps)
    with pytest.raises(SolverError, match="fixed-point"):
        picard_coupled_step(st, cfg, ps)


def test_state_consistency_after_step():
    cfg = _cfg()
    ps = PoissonSolver(cfg.grid)
    st = initial_state(cfg, ps)
    st2, _ = picard_coupled_step(st, cfg, ps)
    from dispersim.grid import diff_x1

    b_norm = np.linalg.norm(diff_x1(st2.u).values[1:-1, 1:-1])
    assert state_consistency_residual(st2, ps) <= cfg.lin_tol * b_norm


# --- full runs


def test_run_constant_initial_condition(tmp_path):
    cfg = _cfg(ic="constant", ic_params="value=1", t_end=0.09375)
    tr = run(cfg, outdir=tmp_path / "out")
    rows = tr.diagnostics
    assert abs(tr.final.u.values - 1.0).max() < 1e-11
    assert all(abs(r.mass - rows[0].mass) < 1e-13 for r in rows)
    assert all(r.umax == pytest.approx(1.0, abs=1e-11) for r in rows)
    assert (tmp_path / "out" / "diagnostics.csv").exists()
    assert (tmp_path / "out" / "resolved.cfg").exists()
    assert (tmp_path / "out" / f"u_{rows[-1].step:06d}.csv").exists()


def test_run_snapshots_every_step(tmp_path):
    cfg = _cfg(t_end=0.09375, output_every=1)
    tr = run(cfg, outdir=tmp_path / "out")
    for row in tr.diagnostics:
        assert (tmp_path / "out" / f"u_{row.step:06d}.csv").exists()
        assert (tmp_path / "out" / f"v_{row.step:06d}.csv").exists()


def test_run_determinism_bytes(tmp_path):
    cfg = _cfg(t_end=0.0625)
    run(cfg, outdir=tmp_path / "a")
    run(cfg, outdir=tmp_path / "b")
    assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()


def test_run_partial_artifacts_on_failure(tmp_path):
    cfg = _cfg(t_end=0.0625, picard_tol=1e-16, picard_max=1)
    with pytest.raises(SolverError):
        run(cfg, outdir=tmp_path / "out")
    text = (tmp_path / "out" / "diagnostics.csv").read_text().splitlines()
    assert text[0].startswith("step,t,")
    assert len(text) >= 2  # header plus the initial row survive the abort


def test_run_fractional_final_step():
    g = _grid(17)
    cfg = RunConfig(grid=g, phys=PhysParams(1, 2, 0.5), reg=RegParams(), dt=g.hx,
                    t_end=2.5 * g.hx, ic="constant", ic_params="value=1")
    tr = run(cfg)
    assert tr.diagnostics[-1].t == pytest.approx(2.5 * g.hx)
    assert len(tr.reports) == 3


def test_snapshot_file_reload_matches_state(tmp_path):
    cfg = _cfg(t_end=0.0625)
    tr = run(cfg, outdir=tmp_path / "out")
    last = tr.final
    back = read_snapshot(tmp_path / "out" / f"u_{last.step:06d}.csv", cfg.grid)
    assert np.array_equal(back.values, last.u.values)
