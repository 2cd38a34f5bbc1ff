"""Parameter sweeps: one run directory per value plus a final-diagnostics summary."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .coefficients import PhysParams, RegParams
from .config import ConfigError
from .transport import DIAGNOSTIC_COLUMNS, RunConfig, Trajectory, run

SWEEPABLE = ("a", "b", "m", "eps", "moll_radius", "dt")


def parse_param_spec(spec: str) -> tuple[str, list[float]]:
    """Parse ``name=v1,v2,...`` into a sweepable parameter name and its values."""
    if "=" not in spec:
        raise ConfigError(f"sweep parameter must look like name=v1,v2,..., got {spec!r}")
    name, _, rest = spec.partition("=")
    name = name.strip()
    if name not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {name!r}; choose one of {', '.join(SWEEPABLE)}")
    values: list[float] = []
    for part in rest.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(float(part))
        except ValueError:
            raise ConfigError(f"sweep value {part!r} is not a number") from None
    if not values:
        raise ConfigError(f"no sweep values given in {spec!r}")
    return name, values


def apply_value(cfg: RunConfig, name: str, value: float) -> RunConfig:
    try:
        if name in ("a", "b", "m"):
            p = cfg.phys
            phys = PhysParams(**{**{"a": p.a, "b": p.b, "m": p.m}, name: value})
            return replace(cfg, phys=phys)
        if name in ("eps", "moll_radius"):
            r = cfg.reg
            reg = RegParams(**{**{"eps": r.eps, "moll_radius": r.moll_radius}, name: value})
            return replace(cfg, reg=reg)
        return replace(cfg, dt=value)
    except ValueError as exc:
        raise ConfigError(f"sweep value {name}={value} is invalid: {exc}") from exc


def run_sweep(cfg: RunConfig, name: str, values: list[float], outdir) -> list[Trajectory]:
    """Run every parameter value; summary rows are ordered by value."""
    base = Path(outdir)
    base.mkdir(parents=True, exist_ok=True)
    ordered = sorted(values)
    variants = [(v, apply_value(cfg, name, v)) for v in ordered]  # validate all before running
    results: list[Trajectory] = []
    with open(base / "summary.csv", "w") as fh:
        fh.write("param,value," + ",".join(DIAGNOSTIC_COLUMNS) + "\n")
        for v, variant in variants:
            subdir = base / f"{name}_{v:g}"
            tr = run(variant, outdir=subdir)
            results.append(tr)
            last = tr.diagnostics[-1]
            vals = [
                str(last.step), format(last.t, ".17g"), format(last.umax, ".17g"), format(last.umin, ".17g"),
                format(last.mass, ".17g"), format(last.l2sq, ".17g"), format(last.energy_dissip, ".17g"),
                format(last.grad_sup, ".17g"), format(last.phi_max, ".17g"), format(last.ut_sup, ".17g"),
                str(last.picard_iters), format(last.picard_gap, ".17g"), format(last.mass_drift, ".17g"),
            ]
            fh.write(f"{name},{v:.17g}," + ",".join(vals) + "\n")
            fh.flush()
    return results
