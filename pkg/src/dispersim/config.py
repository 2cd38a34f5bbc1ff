"""Flat key=value run configuration: parsing, validation, serialization.

The format is one ``key = value`` pair per line, ``#`` starts a comment,
blank lines are ignored.  Keys are exactly::

    nx, ny, lx, ly, a, b, m, eps, moll_radius, dt, t_end,
    picard_tol, picard_max, lin_tol, lin_max, ic, ic_params,
    output_every, outdir

Required: nx, ny, a, b, m, dt, t_end, ic.  Everything else has a
documented default.  Errors carry the offending line number.
"""

from __future__ import annotations

from .coefficients import PhysParams, RegParams
from .grid import GridSpec
from .transport import RunConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


_INT_KEYS = ("nx", "ny", "picard_max", "lin_max", "output_every")
_FLOAT_KEYS = ("lx", "ly", "a", "b", "m", "eps", "moll_radius", "dt", "t_end", "picard_tol", "lin_tol")
_STR_KEYS = ("ic", "ic_params", "outdir")
ALL_KEYS = _INT_KEYS + _FLOAT_KEYS + _STR_KEYS
REQUIRED_KEYS = ("nx", "ny", "a", "b", "m", "dt", "t_end", "ic")

DEFAULTS: dict[str, object] = {
    "lx": 1.0,
    "ly": 1.0,
    "eps": 1e-6,
    "moll_radius": 0.0,
    "picard_tol": 1e-10,
    "picard_max": 30,
    "lin_tol": 1e-10,
    "lin_max": 5000,
    "ic_params": "",
    "output_every": 0,
    "outdir": "",
}


def parse_config(text: str) -> RunConfig:
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        key, _, val = stripped.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno)
        lines[key] = lineno
        if key in _INT_KEYS:
            try:
                values[key] = int(val)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {val!r}", lineno) from None
        elif key in _FLOAT_KEYS:
            try:
                values[key] = float(val)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {val!r}", lineno) from None
        else:
            values[key] = val

    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    for key, default in DEFAULTS.items():
        values.setdefault(key, default)

    def fail(key: str, message: str):
        raise ConfigError(message, lines.get(key))

    nx, ny = values["nx"], values["ny"]
    if nx < 3:
        fail("nx", f"nx must be at least 3, got {nx}")
    if ny < 3:
        fail("ny", f"ny must be at least 3, got {ny}")
    if values["lx"] <= 0:
        fail("lx", f"lx must be positive, got {values['lx']}")
    if values["ly"] <= 0:
        fail("ly", f"ly must be positive, got {values['ly']}")
    a, b, m = values["a"], values["b"], values["m"]
    if a <= 0:
        fail("a", f"a must be positive, got {a}")
    if m <= 0:
        fail("m", f"m must be positive, got {m}")
    if b < a:
        fail("b", f"the dispersion ordering requires b > a (b = a allowed as the isotropic limit), got a={a}, b={b}")
    if b <= 0:
        fail("b", f"b must be positive, got {b}")
    if values["eps"] <= 0:
        fail("eps", f"eps must be positive, got {values['eps']}")
    if values["moll_radius"] < 0:
        fail("moll_radius", f"moll_radius must be nonnegative, got {values['moll_radius']}")
    if values["moll_radius"] > 0.5 * min(values["lx"], values["ly"]):
        fail("moll_radius", f"moll_radius {values['moll_radius']} exceeds half the domain size")
    if values["dt"] <= 0:
        fail("dt", f"dt must be positive, got {values['dt']}")
    if values["t_end"] < values["dt"]:
        fail("t_end", f"t_end must be at least dt, got t_end={values['t_end']}, dt={values['dt']}")
    if values["picard_tol"] <= 0:
        fail("picard_tol", f"picard_tol must be positive, got {values['picard_tol']}")
    if values["lin_tol"] <= 0:
        fail("lin_tol", f"lin_tol must be positive, got {values['lin_tol']}")
    if values["picard_max"] < 1:
        fail("picard_max", f"picard_max must be at least 1, got {values['picard_max']}")
    if values["lin_max"] < 1:
        fail("lin_max", f"lin_max must be at least 1, got {values['lin_max']}")
    if values["output_every"] < 0:
        fail("output_every", f"output_every must be nonnegative, got {values['output_every']}")

    return RunConfig(
        grid=GridSpec(nx, ny, lx=values["lx"], ly=values["ly"]),
        phys=PhysParams(a, b, m),
        reg=RegParams(values["eps"], values["moll_radius"]),
        dt=values["dt"],
        t_end=values["t_end"],
        picard_tol=values["picard_tol"],
        picard_max=values["picard_max"],
        lin_tol=values["lin_tol"],
        lin_max=values["lin_max"],
        ic=values["ic"],
        ic_params=values["ic_params"],
        output_every=values["output_every"],
        outdir=values["outdir"],
    )


def read_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(parse(text))) == parse(text)."""
    g = cfg.grid

    def f(x: float) -> str:
        return format(x, ".17g")

    pairs = [
        ("nx", str(g.nx)), ("ny", str(g.ny)), ("lx", f(g.lx)), ("ly", f(g.ly)),
        ("a", f(cfg.phys.a)), ("b", f(cfg.phys.b)), ("m", f(cfg.phys.m)),
        ("eps", f(cfg.reg.eps)), ("moll_radius", f(cfg.reg.moll_radius)),
        ("dt", f(cfg.dt)), ("t_end", f(cfg.t_end)),
        ("picard_tol", f(cfg.picard_tol)), ("picard_max", str(cfg.picard_max)),
        ("lin_tol", f(cfg.lin_tol)), ("lin_max", str(cfg.lin_max)),
        ("ic", cfg.ic), ("ic_params", cfg.ic_params),
        ("output_every", str(cfg.output_every)), ("outdir", cfg.outdir),
    ]
    return "\n".join(f"{k} = {v}" for k, v in pairs) + "\n"
