"""JSON configuration: schema validation, defaults, and builders for run inputs."""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .coefficients import CoefficientError, CustomTable, make_family
from .paths import DrivingPath, brownian_path, derive_seed, dyadic_refine, fbm_path
from .solver import SolverConfig
from .torus import ScalarField, TorusGrid


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "m": 2.0,
    "eta": 0.01,
    "M": None,
    "delta": 1e-3,
    "grid": {"dim": 1, "points": 128},
    "dt_policy": "cfl",
    "cfl_safety": 0.45,
    "dt": None,
    "T": 0.05,
    "kappa": 0.5,
    "n_snapshots": 10,
    "land_on_snapshots": True,
    "seed": 0,
    "coefficients": {"family": "separable_sine", "params": [], "d": 1, "n": 1, "table": None},
    "path": {"kind": "brownian", "T": None, "knots": 65, "dims": 1, "hurst": 0.5, "velocity": [1.0],
             "value": 0.0, "file": None, "seed": None, "level": None},
    "data": {"kind": "sine", "mean": 1.0, "amp": 0.5, "freq": 1, "phase": 0.0, "width": 0.1,
             "center": 0.5, "file": None},
    "experiment": {},
    "tolerances": {},
}

# assumption each range check protects, quoted in error messages
_ASSUMPTIONS = {
    "diffusion exponent must be positive": "the nonlinearity u^[m] must be strictly increasing",
    "viscosity eta must lie in [0, 1)": "the viscous regularization is a small perturbation",
    "truncation level M must be >= 1": "the truncated nonlinearity agrees with u^[m] on [-1, 1]",
    "mollification width delta must lie in (0, 1]": "the mollifier must be a narrow smoothing kernel",
    "horizon T must be positive": "solutions are sought on a nonempty time interval",
}


def load_schema() -> dict:
    with resources.files("roughpme").joinpath("config_schema.json").open() as fh:
        return json.load(fh)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("experiment", "tolerances", "params"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _key_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        parts += extra[:1]
    return "/".join(parts) or "<root>"


def validate(cfg: dict) -> None:
    schema = load_schema()
    v = jsonschema.Draft7Validator(schema)
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        raise ConfigError(f"config error at {_key_path(e)}: {e.message}")


def parse_config(src) -> dict:
    """Validate a config (path, JSON text or dict) and materialize all defaults."""
    if isinstance(src, dict):
        raw = copy.deepcopy(src)
    else:
        p = Path(src)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: malformed JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    build_solver_config(cfg)  # range checks
    return cfg


def serialize(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2)


# ---------------------------------------------------------------- builders

def build_grid(cfg: dict) -> TorusGrid:
    g = cfg["grid"]
    try:
        return TorusGrid(int(g["dim"]), int(g["points"]))
    except ValueError as exc:
        raise ConfigError(f"config error at grid: {exc}") from exc


def snapshot_times(cfg: dict) -> tuple:
    n = int(cfg["n_snapshots"])
    T = float(cfg["T"])
    return tuple(float(t) for t in np.linspace(0.0, T, n + 1)[1:-1]) if n > 1 else ()


def build_solver_config(cfg: dict, **over) -> SolverConfig:
    kw = dict(m=float(cfg["m"]), eta=float(cfg["eta"]), M=cfg["M"], delta=float(cfg["delta"]),
              grid=build_grid(cfg), dt_policy=cfg["dt_policy"], cfl_safety=float(cfg["cfl_safety"]),
              dt=cfg["dt"], T=float(cfg["T"]), kappa=float(cfg["kappa"]), snapshots=snapshot_times(cfg),
              land_on_snapshots=bool(cfg["land_on_snapshots"]))
    kw.update(over)
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        msg = str(exc)
        why = _ASSUMPTIONS.get(msg)
        raise ConfigError(f"{msg} ({why})" if why else msg) from exc


def build_coefficients(cfg: dict):
    c = cfg["coefficients"]
    try:
        if c.get("table"):
            return CustomTable.from_csv(c["table"])
        return make_family(c["family"], list(c.get("params") or []), d=int(c["d"]), n=int(c["n"]))
    except (CoefficientError, KeyError) as exc:
        raise ConfigError(f"config error at coefficients: {exc}") from exc


def build_path(cfg: dict, spec: dict | None = None, counter: tuple = (0,)) -> DrivingPath:
    """Driver from a path spec; random kinds draw from (master seed, counter) unless a seed is given."""
    p = _merge(DEFAULTS["path"], spec or {}) if spec is not None else cfg["path"]
    T = float(p["T"]) if p["T"] is not None else float(cfg["T"])
    seed = derive_seed(cfg["seed"], *counter) if p["seed"] is None else int(p["seed"])
    kind = p["kind"]
    if kind == "brownian":
        path = brownian_path(seed, T, int(p["knots"]), int(p["dims"]))
    elif kind == "fbm":
        path = fbm_path(seed, float(p["hurst"]), T, int(p["knots"]), int(p["dims"]))
    elif kind == "linear":
        path = DrivingPath.linear(np.asarray(p["velocity"], dtype=float), T, int(p["knots"]))
    elif kind == "constant":
        path = DrivingPath.constant(int(p["dims"]), T, p["value"])
    elif kind == "csv":
        path = DrivingPath.from_csv(p["file"])
    else:  # schema enum makes this unreachable
        raise ConfigError(f"config error at path/kind: unknown kind {kind!r}")
    if p["level"] is not None:
        path = dyadic_refine(path, int(p["level"]))
    return path


def build_data(spec: dict, grid: TorusGrid) -> ScalarField:
    d = _merge(DEFAULTS["data"], spec)
    kind = d["kind"]
    mean, amp, f, ph = float(d["mean"]), float(d["amp"]), float(d["freq"]), float(d["phase"])
    c = grid.coords()
    x = c[..., 0]
    y = c[..., 1] if grid.dim == 2 else None
    if kind == "sine":
        v = np.sin(2 * np.pi * f * (x + ph))
        v = v * np.cos(2 * np.pi * f * y) if y is not None else v
        vals = mean + amp * v
    elif kind == "cosine":
        v = np.cos(2 * np.pi * f * (x + ph))
        v = v * np.cos(2 * np.pi * f * y) if y is not None else v
        vals = mean + amp * v
    elif kind == "constant":
        vals = np.full(grid.shape, mean)
    elif kind == "bump":
        r2 = np.zeros(grid.shape)
        for k in range(grid.dim):
            dk = np.abs(c[..., k] - d["center"])
            dk = np.minimum(dk, 1 - dk)
            r2 += dk * dk
        vals = mean + amp * np.exp(-r2 / (2 * float(d["width"]) ** 2))
    elif kind == "triangle":
        # zero crossings at x = 1/4 and 3/4 (cell faces when 4 | n), slope 4 amp
        vals = mean + amp * (1 - 4 * np.abs(np.mod(x + ph, 1.0) - 0.5))
    elif kind == "csv":
        from .io import read_field_csv

        f_ = read_field_csv(d["file"])
        if f_.grid != grid:
            raise ConfigError("config error at data/file: grid mismatch")
        return f_
    else:
        raise ConfigError(f"config error at data/kind: unknown kind {kind!r}")
    return ScalarField(grid, vals)


def experiment_params(cfg: dict, defaults: dict) -> dict:
    """Experiment section with defaults; unknown keys are errors."""
    extra = set(cfg["experiment"]) - set(defaults)
    if extra:
        raise ConfigError(f"config error at experiment/{sorted(extra)[0]}: unknown key for this subcommand")
    return _merge(defaults, cfg["experiment"])


def tolerances(cfg: dict, defaults: dict) -> dict:
    extra = set(cfg["tolerances"]) - set(defaults)
    if extra:
        raise ConfigError(f"config error at tolerances/{sorted(extra)[0]}: unknown tolerance for this subcommand")
    out = dict(defaults)
    out.update(cfg["tolerances"])
    return out
