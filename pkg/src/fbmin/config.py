"""Run configuration: TOML files with dotted sections, validated exhaustively.

Grammar (all keys optional unless marked required):

    [grid]
    box        = [ax, bx, ay, by]     # default [-1, 1, -1, 1]
    resolution = [nx, ny]             # or a single integer; default 257

    [problem]
    m        = 2                      # component count (consistency-checked)
    boundary = "figure1"              # "figure1" | "constant" | "files"
    boundary_values = [1.0, 2.0]      # for "constant", one value per component
    boundary_files  = ["g1.csv", ...] # for "files", full-grid CSV per component

    [weight]
    kind   = "constant"               # "constant" | "radial" | "file"
    value  = 1.0                      # for "constant"
    center = [0.0, 0.0]               # for "radial"
    q0     = 1.0
    q1     = 2.0
    radius = 0.5
    path   = "q.csv"                  # for "file"

    [solver]
    eps_schedule = [0.5, 0.25, ...]   # decreasing, last <= grid spacing
    max_outer    = 400
    initial_step = 0.2
    backtrack    = 0.5
    sufficient_decrease = 1e-4
    solve_tol    = 1e-10
    flip_radius  = 8
    seed         = 0

    [output]
    directory = "out"

    [checks]
    run = ["scaling", "weiss", "fb-condition", ...]   # default: all

Unknown keys anywhere are rejected; violations are reported all at once.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .grid import BoundaryData, GridSpec, WeightField, make_grid
from .presets import (
    boundary_from_edge_files,
    constant_boundary,
    figure1_boundary,
    weight_constant,
    weight_from_file,
    weight_radial,
)
from .solver import SolverConfig, StepRule

ALL_CHECKS = (
    "admissible",
    "energy",
    "trace",
    "scaling",
    "weiss",
    "fb-condition",
    "traces",
    "identities",
    "measure",
    "nta",
    "flatness",
    "blowup-classify",
    "hodograph",
)

_SCHEMA = {
    "grid": {"box", "resolution"},
    "problem": {"m", "boundary", "boundary_values", "boundary_files"},
    "weight": {"kind", "value", "center", "q0", "q1", "radius", "path"},
    "solver": {
        "eps_schedule",
        "max_outer",
        "initial_step",
        "backtrack",
        "sufficient_decrease",
        "solve_tol",
        "flip_radius",
        "seed",
    },
    "output": {"directory"},
    "checks": {"run"},
}


class ConfigError(ValueError):
    """Invalid run configuration; the message lists every violation."""


@dataclass
class RunConfig:
    grid: GridSpec
    m: int
    boundary_kind: str
    weight_kind: str
    solver: SolverConfig
    output_dir: Path
    checks: tuple
    _boundary_factory: object = field(repr=False, default=None)
    _weight_factory: object = field(repr=False, default=None)

    def boundary(self) -> BoundaryData:
        return self._boundary_factory(self.grid)

    def weight(self) -> WeightField:
        return self._weight_factory(self.grid)


def parse_config(path) -> RunConfig:
    """Load and validate a run configuration file."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")
    return build_config(raw, base_dir=path.parent)


def build_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    errors: list[str] = []

    for section, keys in raw.items():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        if not isinstance(keys, dict):
            errors.append(f"section [{section}] must be a table")
            continue
        for key in keys:
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key '{key}' in section [{section}]")

    gsec = raw.get("grid", {})
    box = gsec.get("box", [-1.0, 1.0, -1.0, 1.0])
    res = gsec.get("resolution", 257)
    if isinstance(res, int):
        res = [res, res]
    grid = None
    try:
        if len(box) != 4:
            raise ValueError("grid.box must have 4 entries [ax, bx, ay, by]")
        grid = make_grid(((box[0], box[1]), (box[2], box[3])), (res[0], res[1]))
    except (ValueError, TypeError, IndexError) as exc:
        errors.append(f"grid: {exc}")

    psec = raw.get("problem", {})
    bkind = psec.get("boundary", "figure1")
    m = psec.get("m")
    bfactory = None
    if bkind == "figure1":
        if m is None:
            m = 2
        if m != 2:
            errors.append("problem: the figure1 preset has exactly 2 components")
        bfactory = figure1_boundary
    elif bkind == "constant":
        values = psec.get("boundary_values")
        if values is None:
            errors.append("problem: boundary 'constant' requires boundary_values")
        else:
            if any(v < 0 for v in values):
                errors.append("problem: boundary values must be nonnegative")
            if m is None:
                m = len(values)
            elif m != len(values):
                errors.append("problem: m does not match len(boundary_values)")
            bfactory = lambda g, v=tuple(values): constant_boundary(g, v)
    elif bkind == "files":
        paths = psec.get("boundary_files")
        if not paths:
            errors.append("problem: boundary 'files' requires boundary_files")
        else:
            paths = [base_dir / p for p in paths]
            for p in paths:
                if not Path(p).exists():
                    errors.append(f"problem: boundary file does not exist: {p}")
            if m is None:
                m = len(paths)
            elif m != len(paths):
                errors.append("problem: m does not match len(boundary_files)")
            bfactory = lambda g, ps=tuple(paths): boundary_from_edge_files(g, ps)
    else:
        errors.append(f"problem: unknown boundary preset '{bkind}'")

    wsec = raw.get("weight", {})
    wkind = wsec.get("kind", "constant")
    wfactory = None
    if wkind == "constant":
        value = wsec.get("value", 1.0)
        if value <= 0:
            errors.append("weight: constant value must be positive (Q_min > 0)")
        else:
            wfactory = lambda g, v=float(value): weight_constant(g, v)
    elif wkind == "radial":
        q0 = wsec.get("q0", 1.0)
        q1 = wsec.get("q1", 1.0)
        radius = wsec.get("radius", 0.5)
        center = wsec.get("center", [0.0, 0.0])
        if q0 <= 0 or q1 <= 0:
            errors.append("weight: radial q0/q1 must be positive (Q_min > 0)")
        if radius <= 0:
            errors.append("weight: radial radius must be positive")
        if wfactory is None and q0 > 0 and q1 > 0 and radius > 0:
            wfactory = lambda g: weight_radial(g, (center[0], center[1]), q0, q1, radius)
    elif wkind == "file":
        wpath = wsec.get("path")
        if not wpath:
            errors.append("weight: kind 'file' requires path")
        elif not (base_dir / wpath).exists():
            errors.append(f"weight: file does not exist: {base_dir / wpath}")
        else:
            wfactory = lambda g, p=base_dir / wpath: weight_from_file(g, p)
    else:
        errors.append(f"weight: unknown kind '{wkind}'")

    ssec = raw.get("solver", {})
    step = StepRule(
        initial_step=float(ssec.get("initial_step", 0.2)),
        backtrack=float(ssec.get("backtrack", 0.5)),
        sufficient_decrease=float(ssec.get("sufficient_decrease", 1e-4)),
    )
    eps_schedule = ssec.get("eps_schedule")
    solver = SolverConfig(
        eps_schedule=tuple(eps_schedule) if eps_schedule else None,
        max_outer=int(ssec.get("max_outer", 400)),
        step=step,
        solve_tol=float(ssec.get("solve_tol", 1e-10)),
        flip_radius=int(ssec.get("flip_radius", 8)),
        seed=int(ssec.get("seed", 0)),
        boundary=bkind,
    )
    if grid is not None and eps_schedule:
        try:
            solver.resolved_schedule(grid, 1.0)
        except ValueError as exc:
            errors.append(f"solver: {exc}")

    osec = raw.get("output", {})
    outdir = Path(osec.get("directory", "out"))

    csec = raw.get("checks", {})
    checks = tuple(csec.get("run", ALL_CHECKS))
    for c in checks:
        if c not in ALL_CHECKS:
            errors.append(f"checks: unknown check '{c}' (known: {', '.join(ALL_CHECKS)})")

    if errors:
        raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errors))
    return RunConfig(
        grid=grid,
        m=int(m),
        boundary_kind=bkind,
        weight_kind=wkind,
        solver=solver,
        output_dir=outdir,
        checks=checks,
        _boundary_factory=bfactory,
        _weight_factory=wfactory,
    )
