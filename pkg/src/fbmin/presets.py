"""Built-in problem presets shared by the CLI and the test-suite."""

from __future__ import annotations

import numpy as np

from .grid import (
    BoundaryData,
    GridSpec,
    WeightField,
    boundary_from_functions,
    make_grid,
    read_field_csv,
)


def figure1_grid(resolution: int = 257) -> GridSpec:
    return make_grid(((-1.0, 1.0), (-1.0, 1.0)), (resolution, resolution))


def figure1_boundary(grid: GridSpec) -> BoundaryData:
    """Two components on the square: g1 = (x2)^-, g2 = (x1)^+.

    The two heat sources sit on the bottom and right edges; the shared zero
    set of the minimizer forms in the opposite (upper-left) region.
    """
    return boundary_from_functions(
        grid,
        [lambda X, Y: np.maximum(-Y, 0.0), lambda X, Y: np.maximum(X, 0.0)],
    )


def constant_boundary(grid: GridSpec, values) -> BoundaryData:
    return boundary_from_functions(grid, [lambda X, Y, v=float(v): v + 0.0 * X for v in values])


def weight_constant(grid: GridSpec, value: float = 1.0) -> WeightField:
    return WeightField(grid, np.full(grid.shape, float(value)))


def weight_radial(grid: GridSpec, center, q0: float, q1: float, radius: float) -> WeightField:
    """Q interpolating from q0 at the center to q1 outside the given radius."""
    X, Y = grid.meshgrid()
    t = np.clip(np.hypot(X - center[0], Y - center[1]) / radius, 0.0, 1.0)
    return WeightField(grid, q0 + (q1 - q0) * t)


def weight_from_file(grid: GridSpec, path) -> WeightField:
    fld = read_field_csv(path)
    if fld.grid != grid:
        raise ValueError("tabulated weight grid does not match the run grid")
    return WeightField(grid, fld.values)


def boundary_from_edge_files(grid: GridSpec, paths) -> BoundaryData:
    """Per-component boundary data from full-grid CSV field files (ring used)."""
    arrays = []
    for path in paths:
        fld = read_field_csv(path)
        if fld.grid != grid:
            raise ValueError(f"boundary field {path} grid does not match the run grid")
        arrays.append(fld.values)
    return BoundaryData(grid, np.stack(arrays))
