"""The cavitation objective J, its smoothed relaxation, the metric d, and the log barrier.

J(u) = integral of |grad u|^2 + Q^2 * chi_{|u|>0}, discretized on cells:

* Dirichlet term: per-cell averaged forward-difference gradients squared,
  summed over components, times cell area.
* volume term: (cell-averaged Q)^2 * area over cells with any positive corner
  node.  The "any node positive" rule keeps the discrete volume count upper
  semicontinuous under pointwise decrease of u, which is the direction the
  descent scheme exploits.

The smoothed relaxation replaces the cell indicator by beta_eps(|u| at the
cell center) with beta_eps(t) = min(1, t/eps); it is piecewise linear, so the
subgradient is exact and the descent line search handles the kinks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GridSpec,
    Mask,
    ScalarField,
    VectorField,
    WeightField,
    cell_gradients,
    positivity_mask,
)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    volume: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.volume


def _check_same_grid(u: VectorField, q: WeightField) -> None:
    if u.grid != q.grid:
        raise ValueError("field and weight live on different grids")


def stacked_cell_gradients(stacked: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell averaged gradients for all components at once; input (m, nx, ny)."""
    gx = (stacked[..., 1:, :-1] - stacked[..., :-1, :-1] + stacked[..., 1:, 1:] - stacked[..., :-1, 1:]) / (2 * grid.hx)
    gy = (stacked[..., :-1, 1:] - stacked[..., :-1, :-1] + stacked[..., 1:, 1:] - stacked[..., 1:, :-1]) / (2 * grid.hy)
    return gx, gy


def dirichlet_energy(u: VectorField) -> float:
    """Sum over cells and components of |cell gradient|^2 times cell area."""
    g = u.grid
    gx, gy = stacked_cell_gradients(u.stacked(), g)
    return float(np.sum(gx * gx + gy * gy)) * g.cell_area


def volume_term(u: VectorField, q: WeightField, mask: Mask | None = None, scale: float | None = None) -> float:
    """(cell Q)^2 * area over cells with at least one positive corner node."""
    _check_same_grid(u, q)
    if mask is None:
        mask = positivity_mask(u, scale)
    qc = q.cell_values()
    return float(np.sum(qc[mask.cell_flags()] ** 2)) * u.grid.cell_area


def evaluate_J(u: VectorField, q: WeightField, mask: Mask | None = None, scale: float | None = None) -> EnergyBreakdown:
    _check_same_grid(u, q)
    return EnergyBreakdown(dirichlet_energy(u), volume_term(u, q, mask=mask, scale=scale))


def _cell_center_magnitude(stacked: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center component means and their Euclidean length, from (m,nx,ny)."""
    means = 0.25 * (stacked[:, :-1, :-1] + stacked[:, 1:, :-1] + stacked[:, :-1, 1:] + stacked[:, 1:, 1:])
    mag = np.sqrt(np.sum(means * means, axis=0))
    return means, mag


def evaluate_J_smoothed(u: VectorField, q: WeightField, eps: float) -> float:
    """Dirichlet term plus relaxed volume with beta_eps(t) = min(1, t/eps)."""
    _check_same_grid(u, q)
    return smoothed_energy_arrays(u.stacked(), q.cell_values(), u.grid, eps)


def smoothed_energy_arrays(stacked: np.ndarray, qc: np.ndarray, grid: GridSpec, eps: float) -> float:
    if eps <= 0:
        raise ValueError("relaxation width eps must be positive")
    gx, gy = stacked_cell_gradients(stacked, grid)
    dir_e = float(np.sum(gx * gx + gy * gy)) * grid.cell_area
    _, mag = _cell_center_magnitude(stacked)
    beta = np.minimum(1.0, mag / eps)
    return dir_e + float(np.sum(qc * qc * beta)) * grid.cell_area


def smoothed_gradient(u: VectorField, q: WeightField, eps: float) -> np.ndarray:
    """Gradient of evaluate_J_smoothed with respect to node values, shape (m, nx, ny).

    At cells where |u| vanishes at the center the volume subgradient is taken
    as zero (any direction is admissible; zero keeps descent stable).
    """
    _check_same_grid(u, q)
    return smoothed_gradient_arrays(u.stacked(), q.cell_values(), u.grid, eps)


def smoothed_gradient_arrays(stacked: np.ndarray, qc: np.ndarray, grid: GridSpec, eps: float) -> np.ndarray:
    if eps <= 0:
        raise ValueError("relaxation width eps must be positive")
    area = grid.cell_area
    grad = np.zeros_like(stacked)

    # Dirichlet part: adjoint of the per-cell averaged differences.
    gx, gy = stacked_cell_gradients(stacked, grid)
    cgx = gx * (area / grid.hx)
    cgy = gy * (area / grid.hy)
    grad[:, :-1, :-1] -= cgx + cgy
    grad[:, 1:, :-1] += cgx - cgy
    grad[:, :-1, 1:] += cgy - cgx
    grad[:, 1:, 1:] += cgx + cgy

    # Volume part: d/du of Q^2 beta(|u_center|), spread onto the 4 corners.
    means, mag = _cell_center_magnitude(stacked)
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = np.where((mag > 0.0) & (mag < eps), 1.0 / eps, 0.0)
        direction = np.where(mag > 0.0, means / np.maximum(mag, 1e-300), 0.0)
    coef = qc * qc * slope * (area * 0.25) * direction
    grad[:, :-1, :-1] += coef
    grad[:, 1:, :-1] += coef
    grad[:, :-1, 1:] += coef
    grad[:, 1:, 1:] += coef
    return grad


def _trapezoid_node_weights(grid: GridSpec) -> np.ndarray:
    """Node quadrature weights whose sum is exactly the box area."""
    w = np.ones(grid.shape)
    w[0, :] *= 0.5
    w[-1, :] *= 0.5
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    return w * grid.cell_area


def metric_d(u: VectorField, v: VectorField) -> float:
    """Discrete H^1 distance plus the area of the positivity-mask symmetric difference.

    The H^1 part is sqrt(sum of value differences squared with trapezoidal node
    weights + sum of cell-gradient differences squared times cell area); the
    mask part sums cell areas where exactly one of the two fields has a
    positive cell.
    """
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    if u.m != v.m:
        raise ValueError("fields have different component counts")
    g = u.grid
    w = _trapezoid_node_weights(g)
    h1_sq = 0.0
    for cu, cv in zip(u.components, v.components):
        diff = cu.values - cv.values
        h1_sq += float(np.sum(diff * diff * w))
        gx, gy = cell_gradients(diff, g)
        h1_sq += float(np.sum(gx * gx + gy * gy)) * g.cell_area
    mask_u = positivity_mask(u).cell_flags()
    mask_v = positivity_mask(v).cell_flags()
    sym_diff = float(np.sum(mask_u ^ mask_v)) * g.cell_area
    return float(np.sqrt(h1_sq)) + sym_diff


def psi_rho(point, rho: float) -> float:
    """Radial log barrier: 0 for |x| <= rho, 1 at |x| = 1, harmonic in between.

    psi_rho(x) = (ln|x| - ln rho)^+ / (ln 1 - ln rho), the planar capacitor
    potential of the annulus rho < |x| < 1.
    """
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    r = float(np.hypot(point[0], point[1]))
    if r <= rho:
        return 0.0
    return float(np.log(r / rho) / np.log(1.0 / rho))


def psi_rho_many(px: np.ndarray, py: np.ndarray, rho: float) -> np.ndarray:
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    r = np.hypot(px, py)
    with np.errstate(divide="ignore"):
        vals = np.log(np.maximum(r, 1e-300) / rho) / np.log(1.0 / rho)
    return np.where(r <= rho, 0.0, vals)
