"""Linear rescalings u(x + r y) / r and half-plane profile classification.

A blowup frame resamples the solution in a ball around a free-boundary point
onto a reference grid at unit scale.  Frames at shrinking radii approximate
the blowup limit; at regular points that limit is a rotated half-plane
profile Q (nu . y)^+ e, which the classifier fits directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, VectorField, interpolate_many, make_grid, vector_field
from .energy import stacked_cell_gradients


@dataclass
class BlowupFrame:
    center: tuple[float, float]
    radius: float
    field: VectorField  # values u(center + radius * y) / radius on the frame grid
    tolerance: float  # bilinear resampling error bound

    @property
    def grid(self) -> GridSpec:
        return self.field.grid


def default_frame_grid(nodes: int = 65) -> GridSpec:
    """Reference frame grid on the unit box [-1,1]^2."""
    return make_grid(((-1.0, 1.0), (-1.0, 1.0)), (nodes, nodes))


def rescale(u: VectorField, center, radius: float, target: GridSpec | None = None) -> BlowupFrame:
    """Resample y -> u(center + radius*y)/radius onto the target grid.

    The window radius*[target box] around the center must lie inside the
    source domain.  The recorded tolerance is a local-Lipschitz times source
    spacing bound on the bilinear resampling error at unit scale.
    """
    if target is None:
        target = default_frame_grid()
    if radius <= 0:
        raise ValueError("blowup radius must be positive")
    src = u.grid
    ext = radius * max(abs(target.ax), abs(target.bx), abs(target.ay), abs(target.by))
    cx, cy = center
    pad = 1e-12 * max(src.bx - src.ax, src.by - src.ay)
    if (
        cx - ext < src.ax - pad
        or cx + ext > src.bx + pad
        or cy - ext < src.ay - pad
        or cy + ext > src.by + pad
    ):
        raise ValueError("blowup window exits the source domain")
    X, Y = target.meshgrid()
    pts = np.column_stack([(cx + radius * X).ravel(), (cy + radius * Y).ravel()])
    arrays = [
        interpolate_many(comp, pts).reshape(target.shape) / radius for comp in u.components
    ]
    # local Lipschitz constant in the window, from the cell gradients there
    i0 = max(0, int((cx - ext - src.ax) / src.hx) - 1)
    i1 = min(src.nx - 1, int(np.ceil((cx + ext - src.ax) / src.hx)) + 1)
    j0 = max(0, int((cy - ext - src.ay) / src.hy) - 1)
    j1 = min(src.ny - 1, int(np.ceil((cy + ext - src.ay) / src.hy)) + 1)
    window = u.stacked()[:, i0 : i1 + 1, j0 : j1 + 1]
    gx, gy = stacked_cell_gradients(window, src)
    lip = float(np.sqrt(np.max(np.sum(gx * gx + gy * gy, axis=0), initial=0.0)))
    tol = max(lip, 1e-12) * src.h / radius
    return BlowupFrame((float(cx), float(cy)), float(radius), vector_field(target, arrays), tol)


def blowup_sequence(u: VectorField, center, radii, target: GridSpec | None = None):
    """Frames at decreasing radii plus sup-norm distances between consecutive ones.

    The distances are the Cauchy proxy for convergence to the blowup limit;
    they are reported, not asserted (resolution is lost as radius approaches
    the grid spacing).
    """
    radii = [float(r) for r in radii]
    if len(radii) < 2:
        raise ValueError("need at least two radii for a blowup sequence")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    frames = [rescale(u, center, r, target) for r in radii]
    dists = [
        float(np.max(np.abs(a.field.stacked() - b.field.stacked())))
        for a, b in zip(frames, frames[1:])
    ]
    return frames, dists


def classify_regular(frame: BlowupFrame, q_at_center: float, n_angles: int = 1024):
    """Fit the rotated half-plane profile Q (nu . y)^+ e to a frame.

    Scans the unit circle of directions, picks component weights by least
    squares (clamped nonnegative, normalized), then refines the best angle by
    golden-section search.  Returns a dict with nu, e, and the sup-norm
    misfit over the unit ball.
    """
    stacked = frame.field.stacked()
    if float(np.max(np.abs(stacked))) == 0.0:
        raise ValueError("frame is identically zero; profile direction undefined")
    if q_at_center <= 0:
        raise ValueError("Q at the center must be positive")
    grid = frame.grid
    X, Y = grid.meshgrid()
    inside = X * X + Y * Y <= 1.0 + 1e-12

    def misfit(theta: float):
        nu = (np.cos(theta), np.sin(theta))
        profile = np.maximum(nu[0] * X + nu[1] * Y, 0.0)
        pp = float(np.sum(profile[inside] ** 2))
        if pp == 0.0:
            return np.inf, np.zeros(stacked.shape[0])
        e = np.array([float(np.sum(c[inside] * profile[inside])) for c in stacked])
        e /= q_at_center * pp
        e = np.maximum(e, 0.0)
        norm = float(np.linalg.norm(e))
        if norm == 0.0:
            return np.inf, e
        e /= norm
        model = q_at_center * e[:, None, None] * profile[None, :, :]
        resid = np.sqrt(np.sum((stacked - model) ** 2, axis=0))
        return float(resid[inside].max()), e

    thetas = 2 * np.pi * np.arange(n_angles) / n_angles
    vals = np.array([misfit(t)[0] for t in thetas])
    best = int(np.argmin(vals))  # ties resolve to the smallest angle
    lo = thetas[best] - 2 * np.pi / n_angles
    hi = thetas[best] + 2 * np.pi / n_angles
    invphi = (np.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = misfit(c)[0], misfit(d)[0]
    for _ in range(60):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = misfit(c)[0]
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = misfit(d)[0]
    theta = 0.5 * (a + b)
    resid, e = misfit(theta)
    return {
        "nu": (float(np.cos(theta)), float(np.sin(theta))),
        "e": tuple(float(v) for v in e),
        "residual": float(resid),
        "theta": float(theta % (2 * np.pi)),
    }
