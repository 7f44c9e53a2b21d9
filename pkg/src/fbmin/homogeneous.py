"""Exact first-order homogeneous minimizers and the planar cone classification.

The only first-order homogeneous minimizer with connected positivity cone is
the half-plane profile u_i = e_i Q0 (x . nu)^+ (up to rotation and component
weights).  The classification reduces to a spherical eigenvalue problem: a
nonnegative eigenfunction of -d^2/dphi^2 on an arc of opening theta with
Dirichlet ends and eigenvalue n-1 = 1 forces (pi/theta)^2 = 1, hence a
half-circle arc.  The punctured-ball cone (theta = 2pi) is excluded since its
first eigenvalue 1/4 falls short of 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .grid import GridSpec, VectorField, vector_field


@dataclass(frozen=True)
class HalfPlaneSpec:
    """Slope Q0, interface direction nu, and component weights e."""

    q0: float
    nu: tuple[float, float] = (1.0, 0.0)
    e: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.q0 <= 0:
            raise ValueError("Q0 must be positive")
        if abs(np.hypot(*self.nu) - 1.0) > 1e-12:
            raise ValueError("nu must be a unit vector")
        e = np.asarray(self.e, dtype=float)
        if abs(float(np.linalg.norm(e)) - 1.0) > 1e-12 or np.any(e < -1e-12):
            raise ValueError("e must be a unit vector with nonnegative entries")


def halfplane_field(spec: HalfPlaneSpec, grid: GridSpec, offset: float = 0.0) -> VectorField:
    """u_i(x) = e_i * Q0 * ((x . nu) - offset)^+, first-order homogeneous about
    the point offset*nu (about the origin when offset = 0)."""
    X, Y = grid.meshgrid()
    plane = np.maximum(spec.nu[0] * X + spec.nu[1] * Y - offset, 0.0)
    return vector_field(grid, [ei * spec.q0 * plane for ei in spec.e], admissible=True)


def arc_first_eigenvalue(theta: float, n_nodes: int = 2048) -> float:
    """Smallest Dirichlet eigenvalue of -d^2/dphi^2 on (0, theta).

    Second-difference discretization with n_nodes interior nodes and inverse
    power iteration (tridiagonal solves); the closed form is (pi/theta)^2.
    """
    if not (0.0 < theta <= 2.0 * np.pi):
        raise ValueError("arc opening must lie in (0, 2*pi]")
    if n_nodes < 16:
        raise ValueError("need at least 16 interior nodes")
    n = int(n_nodes)
    dphi = theta / (n + 1)
    # banded storage for solveh_banded: row 0 = superdiagonal, row 1 = diagonal
    ab = np.zeros((2, n))
    ab[0, 1:] = -1.0 / dphi**2
    ab[1, :] = 2.0 / dphi**2
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(200):
        w = solveh_banded(ab, v)
        w /= np.linalg.norm(w)
        lam_new = float(w @ (_tridiag_apply(w, dphi)))
        if abs(lam_new - lam) <= 1e-12 * max(1.0, abs(lam_new)):
            v = w
            lam = lam_new
            break
        v = w
        lam = lam_new
    return lam


def _tridiag_apply(v: np.ndarray, dphi: float) -> np.ndarray:
    out = 2.0 * v
    out[:-1] -= v[1:]
    out[1:] -= v[:-1]
    return out / dphi**2


def arc_ground_state(theta: float, n_nodes: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Interior angles and the (sign-fixed) first eigenfunction of the arc."""
    n = int(n_nodes)
    dphi = theta / (n + 1)
    ab = np.zeros((2, n))
    ab[0, 1:] = -1.0 / dphi**2
    ab[1, :] = 2.0 / dphi**2
    v = np.ones(n)
    for _ in range(200):
        v = solveh_banded(ab, v)
        v /= np.linalg.norm(v)
    if v.sum() < 0:
        v = -v
    phi = dphi * np.arange(1, n + 1)
    return phi, v


def classify_homogeneous_2d(n_nodes: int = 2048) -> dict:
    """Solve lambda_1(theta) = 1 and certify the half-plane classification.

    Returns the root theta* (the half-circle pi), a monotonicity certificate
    for lambda_1 over a 32-point sweep, the positivity of the ground state at
    theta*, and the exclusion of the punctured ball (theta = 2pi gives 1/4).
    """
    lo, hi = np.pi / 2, 3 * np.pi / 2
    flo = arc_first_eigenvalue(lo, n_nodes) - 1.0
    fhi = arc_first_eigenvalue(hi, n_nodes) - 1.0
    if not (flo > 0 > fhi):
        raise RuntimeError("eigenvalue bisection bracket failed")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        fmid = arc_first_eigenvalue(mid, n_nodes) - 1.0
        if fmid > 0:
            lo = mid
        else:
            hi = mid
    theta_star = 0.5 * (lo + hi)

    sweep = np.linspace(np.pi / 4, 2 * np.pi, 32)
    lam = [arc_first_eigenvalue(t, 256) for t in sweep]
    monotone = bool(all(b < a for a, b in zip(lam, lam[1:])))

    phi, ground = arc_ground_state(theta_star, 512)
    ground_positive = bool(np.all(ground > 0))
    sin_err = float(np.max(np.abs(ground / np.max(ground) - np.sin(phi * np.pi / theta_star) / np.max(np.sin(phi * np.pi / theta_star)))))

    lam_full = arc_first_eigenvalue(2 * np.pi - 1e-9, n_nodes)
    return {
        "theta_star": float(theta_star),
        "theta_error": float(abs(theta_star - np.pi)),
        "eigenvalue_at_pi": float(arc_first_eigenvalue(np.pi, n_nodes)),
        "sweep_thetas": [float(t) for t in sweep],
        "sweep_eigenvalues": [float(v) for v in lam],
        "monotone_decreasing": monotone,
        "ground_state_positive": ground_positive,
        "ground_state_vs_sine": sin_err,
        "full_circle_eigenvalue": float(lam_full),
        "punctured_ball_excluded": bool(lam_full < 1.0),
        "verdict": "connected positivity cone of a first-order homogeneous minimizer is the half-plane (opening pi); the punctured ball is excluded",
    }
