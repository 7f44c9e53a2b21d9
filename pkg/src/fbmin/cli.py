"""Command-line entry point.

Subcommands:
    fbmin solve <config>                          minimize and write artifacts
    fbmin diagnose <config> --solution DIR        run checks on a stored solution
    fbmin figure1 [--resolution N] [--out DIR]    two-component preset + full report
    fbmin homogeneous [--out DIR]                 cone classification report
    fbmin hodograph <config> --window x0,x1,y0,y1 straightened-patch residuals

Exit codes: 0 success, 1 configuration error, 2 runtime or check failure.
FBMIN_THREADS caps the worker threads of the numerical backends.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _cap_threads() -> None:
    cap = os.environ.get("FBMIN_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def main(argv=None) -> int:
    _cap_threads()
    parser = argparse.ArgumentParser(prog="fbmin", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="minimize the energy for a config and write artifacts")
    p_solve.add_argument("config", type=Path)

    p_diag = sub.add_parser("diagnose", help="run diagnostics on a stored solution")
    p_diag.add_argument("config", type=Path)
    p_diag.add_argument("--solution", type=Path, required=True, help="directory written by 'solve'")
    p_diag.add_argument("--checks", type=str, default=None, help="comma-separated check names")
    p_diag.add_argument("--out", type=Path, default=None, help="report path (default: report.json in the solution dir)")

    p_fig = sub.add_parser("figure1", help="solve the two-component preset and run the full suite")
    p_fig.add_argument("--resolution", type=int, default=257)
    p_fig.add_argument("--out", type=Path, default=Path("figure1-out"))
    p_fig.add_argument("--seed", type=int, default=0)

    p_hom = sub.add_parser("homogeneous", help="classify planar homogeneous minimizers")
    p_hom.add_argument("--out", type=Path, default=None, help="write the JSON report here (default stdout)")

    p_hod = sub.add_parser("hodograph", help="straighten a free-boundary window and report residuals")
    p_hod.add_argument("config", type=Path)
    p_hod.add_argument("--window", type=str, required=True, help="x0,x1,y0,y1 of the source window")
    p_hod.add_argument("--solution", type=Path, default=None, help="reuse a stored solution instead of solving")
    p_hod.add_argument("--out", type=Path, default=Path("hodograph-out"))

    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args.config)
        if args.command == "diagnose":
            checks = tuple(args.checks.split(",")) if args.checks else None
            return cmd_diagnose(args.config, args.solution, checks, args.out)
        if args.command == "figure1":
            return cmd_figure1(args.resolution, args.out, args.seed)
        if args.command == "homogeneous":
            return cmd_homogeneous(args.out)
        if args.command == "hodograph":
            return cmd_hodograph(args.config, args.window, args.solution, args.out)
    except BrokenPipeError:
        return 2
    raise AssertionError("unreachable")


def _load_config(path):
    from .config import ConfigError, parse_config

    try:
        return parse_config(path), 0
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return None, 1


def _write_solution(sol, outdir: Path) -> None:
    import numpy as np

    from .grid import Mask, ScalarField, write_field_binary, write_field_csv, write_mask_pgm
    from .io_utils import write_scalar_pgm, write_trace_csv

    outdir.mkdir(parents=True, exist_ok=True)
    grid = sol.grid
    mag = sol.u.magnitude()
    total = np.sum(sol.u.stacked(), axis=0)
    fields = {f"u{k + 1}": comp.values for k, comp in enumerate(sol.u.components)}
    fields["mag"] = mag
    fields["sum"] = total
    for name, values in fields.items():
        fld = ScalarField(grid, values)
        write_field_csv(fld, outdir / f"{name}.csv")
        write_field_binary(fld, outdir / f"{name}.fbm")
    write_mask_pgm(sol.mask, outdir / "mask.pgm")
    from .grid import positivity_mask, positivity_tol

    tol = positivity_tol(sol.scale)
    for k, comp in enumerate(sol.u.components):
        write_mask_pgm(Mask(grid, comp.values > tol), outdir / f"mask_u{k + 1}.pgm")
    write_trace_csv(sol.trace, outdir / "trace.csv")
    summary = {
        "schema": "fbmin-solution/1",
        "grid": {"box": [grid.ax, grid.bx, grid.ay, grid.by], "nodes": [grid.nx, grid.ny]},
        "m": sol.u.m,
        "energy": {"dirichlet": sol.energy.dirichlet, "volume": sol.energy.volume, "total": sol.energy.total},
        "iterations": len(sol.trace),
        "accepted_moves": sum(1 for r in sol.trace if r.accepted),
        "d_moved_total": sum(r.d_moved for r in sol.trace if r.accepted),
        "scale": sol.scale,
        "positive_nodes": int(sol.mask.count()),
    }
    (outdir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def _load_solution(cfg, soldir: Path):
    import numpy as np

    from .energy import evaluate_J
    from .grid import BoundaryData, positivity_mask, read_field_csv, vector_field
    from .solver import Solution
    from .io_utils import read_trace_csv

    summary = json.loads((soldir / "summary.json").read_text())
    m = summary["m"]
    comps = []
    for k in range(m):
        fld = read_field_csv(soldir / f"u{k + 1}.csv")
        if fld.grid != cfg.grid:
            raise ValueError("stored solution grid does not match the config grid")
        comps.append(fld.values)
    u = vector_field(cfg.grid, comps, admissible=True)
    scale = float(summary["scale"])
    mask = positivity_mask(u, scale)
    q = cfg.weight()
    ring_vals = np.stack(comps)
    g = BoundaryData(cfg.grid, ring_vals)
    trace = read_trace_csv(soldir / "trace.csv") if (soldir / "trace.csv").exists() else []
    return Solution(u, mask, evaluate_J(u, q, mask=mask), trace, q, g, scale)


def cmd_solve(config_path: Path) -> int:
    cfg, rc = _load_config(config_path)
    if cfg is None:
        return rc
    from .solver import SolveError, minimize

    try:
        sol = minimize(cfg.grid, cfg.weight(), cfg.boundary(), cfg.solver)
    except SolveError as exc:
        diag = {"error": str(exc), "schema": "fbmin-failure/1"}
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        (cfg.output_dir / "failure.json").write_text(json.dumps(diag, sort_keys=True, indent=2) + "\n")
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    _write_solution(sol, cfg.output_dir)
    print(f"J = {sol.energy.total:.12g} (dirichlet {sol.energy.dirichlet:.12g}, volume {sol.energy.volume:.12g})")
    print(f"artifacts in {cfg.output_dir}")
    return 0


def cmd_diagnose(config_path: Path, soldir: Path, checks=None, out: Path | None = None) -> int:
    cfg, rc = _load_config(config_path)
    if cfg is None:
        return rc
    from .reporting import run_diagnostics

    if checks is None:
        checks = cfg.checks
    try:
        sol = _load_solution(cfg, soldir)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load solution from {soldir}: {exc}", file=sys.stderr)
        return 2
    report = run_diagnostics(sol, checks=checks)
    out = out or (soldir / "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    if report.passed():
        print(f"all checks passed; report in {out}")
        return 0
    print("failed checks: " + ", ".join(report.failed_names()), file=sys.stderr)
    print(f"report in {out}", file=sys.stderr)
    return 2


def cmd_figure1(resolution: int = 257, outdir: Path = Path("figure1-out"), seed: int = 0) -> int:
    import numpy as np

    from .grid import ScalarField
    from .io_utils import write_scalar_pgm
    from .presets import figure1_boundary, figure1_grid, weight_constant
    from .reporting import run_diagnostics
    from .solver import SolveError, SolverConfig, minimize

    grid = figure1_grid(resolution)
    q = weight_constant(grid, 1.0)
    g = figure1_boundary(grid)
    try:
        sol = minimize(grid, q, g, SolverConfig(seed=seed))
    except SolveError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    outdir = Path(outdir)
    _write_solution(sol, outdir)
    mag = sol.u.magnitude()
    total = np.sum(sol.u.stacked(), axis=0)
    panels = {
        "panel_u1": sol.u.components[0].values,
        "panel_u2": sol.u.components[1].values,
        "panel_sum": total,
        "panel_mag": mag,
    }
    for name, values in panels.items():
        write_scalar_pgm(ScalarField(grid, values), outdir / f"{name}.pgm")
    report = run_diagnostics(sol)
    (outdir / "report.json").write_text(report.to_json())
    print(f"J = {sol.energy.total:.12g}; artifacts in {outdir}")
    if not report.passed():
        print("failed checks: " + ", ".join(report.failed_names()), file=sys.stderr)
        return 2
    return 0


def cmd_homogeneous(out: Path | None = None) -> int:
    from .homogeneous import classify_homogeneous_2d

    record = classify_homogeneous_2d()
    payload = json.dumps({"schema": "fbmin-homogeneous/1", **record}, sort_keys=True, indent=2) + "\n"
    if out is None:
        sys.stdout.write(payload)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(payload)
        print(f"report in {out}")
    ok = record["theta_error"] <= 1e-6 and record["monotone_decreasing"] and record["punctured_ball_excluded"]
    return 0 if ok else 2


def cmd_hodograph(config_path: Path, window_spec: str, soldir: Path | None, outdir: Path) -> int:
    cfg, rc = _load_config(config_path)
    if cfg is None:
        return rc
    try:
        parts = [float(v) for v in window_spec.split(",")]
        if len(parts) != 4:
            raise ValueError
    except ValueError:
        print("--window expects x0,x1,y0,y1", file=sys.stderr)
        return 1
    from .grid import ScalarField, write_field_csv
    from .hodograph import ellipticity_margin, fb_bc_residual, hodograph_transform, operator_residual
    from .solver import SolveError, minimize

    try:
        if soldir is not None:
            sol = _load_solution(cfg, soldir)
        else:
            sol = minimize(cfg.grid, cfg.weight(), cfg.boundary(), cfg.solver)
        patch = hodograph_transform(sol.u, ((parts[0], parts[1]), (parts[2], parts[3])))
    except (SolveError, ValueError) as exc:
        print(f"hodograph failure: {exc}", file=sys.stderr)
        return 2
    res = operator_residual(patch)
    bc = fb_bc_residual(patch, sol.q)
    margin = ellipticity_margin(patch)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_field_csv(ScalarField(patch.ygrid, patch.v1), outdir / "v1.csv")
    for name, fieldvals in res["fields"].items():
        import numpy as np

        write_field_csv(ScalarField(patch.ygrid, np.nan_to_num(fieldvals)), outdir / f"residual_{name}.csv")
    payload = {
        "schema": "fbmin-hodograph/1",
        "window": parts,
        "operator_residual_max": res["max"],
        "bc_residual_max": float(bc.max()),
        "ellipticity_margin": margin,
        "roundtrip_error": patch.roundtrip_error,
        "smoothing_error": patch.smoothing_error,
    }
    (outdir / "hodograph.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"ellipticity margin {margin:.6g}; artifacts in {outdir}")
    return 0 if margin > 0 else 2


if __name__ == "__main__":
    sys.exit(main())
