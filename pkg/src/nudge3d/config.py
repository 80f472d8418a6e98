"""Build solver objects from the flat dotted-key configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass

from nudge3d.dynamics import NudgeConfig, SolverConfig
from nudge3d.errors import ConfigurationError
from nudge3d.interpolants import InterpolantSpec
from nudge3d.io import parse_length, read_snapshot
from nudge3d.scenarios import forcing_field, initial_field
from nudge3d.spectral import GridSpec

DEFAULTS = {
    "grid.n": 32,
    "grid.L": "2*pi",
    "grid.dealias": "two-thirds",
    "solver.nu": 0.1,
    "solver.dt": 0.01,
    "solver.t_end": 1.0,
    "solver.integrator": "IF-RK2",
    "solver.cfl": 1.0,
    "solver.nonlinear": True,
    "forcing.kind": "none",
    "forcing.amplitude": 1.0,
    "init.kind": "random",
    "init.seed": 0,
    "init.spectrum": 5.0 / 3.0,
    "init.k_max": 4,
    "init.amplitude": 1.0,
    "nudge.mu": "auto",
    "nudge.w0": "zero",
    "nudge.theorem_mode": False,
    "nudge.purpose": "regular",
    "interp.kind": "modal",
    "interp.cutoff": "4*lambda1",
    "interp.h": "L/8",
    "interp.eps_fraction": 0.5,
    "interp.samples": 200,
    "interp.seed": 0,
    "obs.hold": "linear",
    "run.emit_every": 1,
    "adaptive.intervals": 4,
}

KNOWN_PREFIXES = ("grid.", "solver.", "forcing.", "init.", "nudge.", "interp.", "obs.", "run.",
                  "adaptive.")


def merged(cfg):
    out = dict(DEFAULTS)
    for key, val in cfg.items():
        if not key.startswith(KNOWN_PREFIXES):
            raise ConfigurationError(f"unknown configuration key {key!r}")
        out[key] = val
    return out


def _num(cfg, key, **names):
    try:
        return parse_length(cfg[key], names.pop("L", None), **names)
    except KeyError:
        raise ConfigurationError(f"missing configuration key {key!r}") from None


def build_grid(cfg):
    L = _num(cfg, "grid.L")
    try:
        return GridSpec(int(cfg["grid.n"]), L, str(cfg["grid.dealias"]))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc


def build_solver(cfg, grid=None):
    grid = grid or build_grid(cfg)
    nu = _num(cfg, "solver.nu")
    kind = str(cfg["forcing.kind"])
    grashof = cfg.get("forcing.grashof")
    f = forcing_field(grid, kind, grashof=None if grashof is None else float(grashof),
                      amplitude=float(cfg["forcing.amplitude"]), nu=nu)
    return SolverConfig(grid, nu, _num(cfg, "solver.dt"), _num(cfg, "solver.t_end"),
                        str(cfg["solver.integrator"]), f, bool(cfg["solver.nonlinear"]),
                        float(cfg["solver.cfl"]))


def build_initial(cfg, grid, prefix="init"):
    kind = str(cfg.get(f"{prefix}.kind", "random"))
    if kind == "snapshot":
        field, _ = read_snapshot(cfg[f"{prefix}.path"])
        if field.grid.n != grid.n or not math.isclose(field.grid.L, grid.L):
            raise ConfigurationError("snapshot grid does not match grid.n / grid.L")
        return field
    energy = cfg.get(f"{prefix}.energy")
    return initial_field(grid, kind, int(cfg.get(f"{prefix}.seed", 0)),
                         float(cfg.get(f"{prefix}.spectrum", 5.0 / 3.0)),
                         int(cfg.get(f"{prefix}.k_max", 4)),
                         None if energy is None else float(energy),
                         float(cfg.get(f"{prefix}.amplitude", 1.0)))


def build_interpolant(cfg, grid):
    kind = str(cfg["interp.kind"])
    c = cfg.get("interp.c")
    extra = {} if c is None else {"c_override": float(c)}
    if kind == "modal":
        cutoff = _num(cfg, "interp.cutoff", L=grid.L, lambda1=grid.lambda1)
        return InterpolantSpec.modal(cutoff, **extra)
    h = _num(cfg, "interp.h", L=grid.L)
    if kind == "volume":
        return InterpolantSpec.volume(h, **extra)
    if kind == "mollified":
        return InterpolantSpec.mollified(h, float(cfg["interp.eps_fraction"]), **extra)
    raise ConfigurationError(f"unknown interpolant kind {kind!r}")


def build_nudge(cfg, grid, spec, mu):
    w0 = None
    src = str(cfg["nudge.w0"])
    if src != "zero":
        if not src.startswith("snapshot:"):
            raise ConfigurationError("nudge.w0 must be 'zero' or 'snapshot:<path>'")
        w0, _ = read_snapshot(src.split(":", 1)[1])
    return NudgeConfig(float(mu), spec, w0, bool(cfg["nudge.theorem_mode"]))


@dataclass
class RunSetup:
    config: dict
    grid: GridSpec
    solver: SolverConfig
    u0: object
    interpolant: InterpolantSpec


def build_run(flat):
    cfg = merged(flat)
    grid = build_grid(cfg)
    solver = build_solver(cfg, grid)
    u0 = build_initial(cfg, grid)
    spec = build_interpolant(cfg, grid)
    return RunSetup(cfg, grid, solver, u0, spec)
