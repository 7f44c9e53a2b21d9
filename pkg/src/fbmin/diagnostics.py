"""Quantitative free-boundary checks on a computed or exact solution.

Each check probes one statement of the regularity theory at desk scale:
linear growth and nondegeneracy of |u| at free-boundary points, positive
density of the zero set, the boundary condition |grad|u|| = Q in the
one-sided non-tangential sense, the component weight traces w_i = u_i/|u|,
the scale-normalized (Weiss) energy and its monotonicity, the basic energy /
Pohozaev / domain-variation integral identities, flatness, and the corkscrew
and complement-density geometry of the positivity set.

The theory's constants are non-explicit, so checks report fitted constants
and assert only positivity, finiteness, and configured generous thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .energy import stacked_cell_gradients
from .grid import (
    Mask,
    ScalarField,
    VectorField,
    ball_integrate_cells,
    boundary_ring,
    interpolate_many,
    positivity_tol,
)
from .solver import Solution


# ---------------------------------------------------------------------------
# free boundary extraction


@dataclass
class FreeBoundary:
    """Interface sample points with outward normals and polyline weights.

    Points sit at midpoints of grid edges whose endpoints disagree in
    positivity; normals are unit vectors pointing from the positivity set
    into the zero set; weights are the local marching-squares segment
    lengths, so that sums over points approximate length integrals.
    """

    points: np.ndarray  # (k, 2)
    normals: np.ndarray  # (k, 2)
    weights: np.ndarray  # (k,)
    h: float

    def __len__(self):
        return self.points.shape[0]

    def nearest(self, x) -> int:
        d = np.hypot(self.points[:, 0] - x[0], self.points[:, 1] - x[1])
        return int(np.argmin(d))

    def distance(self, x) -> float:
        return float(np.hypot(self.points[:, 0] - x[0], self.points[:, 1] - x[1]).min())


def extract_free_boundary(mask: Mask, fit_radius: float | None = None) -> FreeBoundary:
    """One point per sign-changing grid edge, with fitted normals."""
    flags = mask.flags
    if flags.all() or not flags.any():
        raise ValueError("mask is constant; there is no free boundary")
    grid = mask.grid
    xs, ys = grid.xs(), grid.ys()
    pts = []
    hints = []
    # x-edges
    ii, jj = np.nonzero(flags[:-1, :] != flags[1:, :])
    for i, j in zip(ii, jj):
        pts.append((0.5 * (xs[i] + xs[i + 1]), ys[j]))
        hints.append((1.0, 0.0) if flags[i, j] else (-1.0, 0.0))
    # y-edges
    ii, jj = np.nonzero(flags[:, :-1] != flags[:, 1:])
    for i, j in zip(ii, jj):
        pts.append((xs[i], 0.5 * (ys[j] + ys[j + 1])))
        hints.append((0.0, 1.0) if flags[i, j] else (0.0, -1.0))
    points = np.asarray(pts)
    hints = np.asarray(hints)
    weights = _polyline_weights(flags, grid, points)
    fb = FreeBoundary(points, hints.copy(), weights, grid.h)
    if fit_radius is None:
        fit_radius = 3.2 * grid.h
    normals = np.empty_like(points)
    for k in range(len(fb)):
        normals[k] = _fit_normal(fb, fb.points[k], fit_radius, hints[k])
    fb.normals = normals
    return fb


def _polyline_weights(flags, grid, points):
    """Marching-squares segment lengths, split evenly onto segment endpoints."""
    # index the points by their edge for O(1) lookup
    key_of = {}
    for k, (px, py) in enumerate(points):
        key_of[(round(float(px), 12), round(float(py), 12))] = k
    weights = np.zeros(points.shape[0])
    xs, ys = grid.xs(), grid.ys()
    f = flags
    corner = np.stack([f[:-1, :-1], f[1:, :-1], f[1:, 1:], f[:-1, 1:]])  # SW, SE, NE, NW
    mixed = np.nonzero(corner.any(axis=0) & ~corner.all(axis=0))
    for ci, cj in zip(*mixed):
        sw, se, ne, nw = (bool(corner[t, ci, cj]) for t in range(4))
        x0, x1 = xs[ci], xs[ci + 1]
        y0, y1 = ys[cj], ys[cj + 1]
        edge_pts = {
            "S": (0.5 * (x0 + x1), y0) if sw != se else None,
            "E": (x1, 0.5 * (y0 + y1)) if se != ne else None,
            "N": (0.5 * (x0 + x1), y1) if nw != ne else None,
            "W": (x0, 0.5 * (y0 + y1)) if sw != nw else None,
        }
        crossings = [name for name, p in edge_pts.items() if p is not None]
        if len(crossings) == 2:
            pairs = [tuple(crossings)]
        else:
            # saddle cell: pair crossings so segments separate the two
            # diagonal positive corners (resolved toward separate components)
            pairs = [("S", "E"), ("N", "W")] if sw else [("S", "W"), ("N", "E")]
        for a, b in pairs:
            pa, pb = edge_pts[a], edge_pts[b]
            seg = float(np.hypot(pa[0] - pb[0], pa[1] - pb[1]))
            for p in (pa, pb):
                k = key_of.get((round(p[0], 12), round(p[1], 12)))
                if k is not None:
                    weights[k] += 0.5 * seg
    return weights


def _fit_normal(fb: FreeBoundary, point, fit_radius: float, hint) -> np.ndarray:
    d = np.hypot(fb.points[:, 0] - point[0], fb.points[:, 1] - point[1])
    near = d <= fit_radius
    if int(near.sum()) < 4:
        v = np.asarray(hint, dtype=float)
        return v / np.linalg.norm(v)
    pts = fb.points[near]
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, 0]  # smallest-variance direction
    if float(np.dot(normal, hint)) < 0:
        normal = -normal
    return normal / np.linalg.norm(normal)


def estimate_normal(fb: FreeBoundary, point, fit_radius: float) -> np.ndarray:
    """Unit normal at an interface location, from positivity set to zero set.

    Least-squares line fit of the interface points within the fit radius;
    orientation from the stored edge-based direction of the nearest point.
    """
    d = np.hypot(fb.points[:, 0] - point[0], fb.points[:, 1] - point[1])
    if int((d <= fit_radius).sum()) < 4:
        raise ValueError("fewer than 4 interface points within the fit radius")
    hint = fb.normals[int(np.argmin(d))]
    return _fit_normal(fb, point, fit_radius, hint)


# ---------------------------------------------------------------------------
# report plumbing


@dataclass
class CheckRecord:
    name: str
    claim: str  # the mathematical statement the check tests
    status: str  # pass | fail | info
    values: dict = field(default_factory=dict)


@dataclass
class DiagnosticsReport:
    provenance: dict
    records: list

    def passed(self) -> bool:
        return all(r.status != "fail" for r in self.records)

    def failed_names(self) -> list:
        return [r.name for r in self.records if r.status == "fail"]

    def to_dict(self) -> dict:
        return {
            "schema": "fbmin-report/1",
            "provenance": self.provenance,
            "passed": self.passed(),
            "checks": [
                {"name": r.name, "claim": r.claim, "status": r.status, "values": _jsonify(r.values)}
                for r in self.records
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# pointwise scaling checks


def _nodes_in_ball(grid, x, r):
    X, Y = grid.meshgrid()
    return (X - x[0]) ** 2 + (Y - x[1]) ** 2 <= r * r


def _grad_sq_cells(u: VectorField) -> np.ndarray:
    gx, gy = stacked_cell_gradients(u.stacked(), u.grid)
    return np.sum(gx * gx + gy * gy, axis=0)


def scaling_report(sol: Solution, x, radii, fb: FreeBoundary | None = None) -> dict:
    """Growth, nondegeneracy, zero-set density and Lipschitz ratios at a point.

    For each radius r: sphere averages of u_i over r, sup of |u| over the
    ball over r, the volume fraction of the zero set, and the local Lipschitz
    level (max cell gradient magnitude in the third-radius ball).
    """
    grid = sol.grid
    if fb is None:
        fb = extract_free_boundary(sol.mask)
    if fb.distance(x) > grid.h * (1 + 1e-9):
        raise ValueError("probe point is not within one spacing of the free boundary")
    radii = [float(r) for r in radii]
    for r in radii:
        if not grid.ball_inside(x, r):
            raise ValueError(f"ball of radius {r} exits the domain")
        if r < 4 * grid.h:
            raise ValueError("radii below 4 grid spacings are under-resolved")
    mag = sol.u.magnitude()
    grad_cells = np.sqrt(_grad_sq_cells(sol.u))
    zero_cells = (~sol.mask.cell_flags()).astype(float)
    out = {"center": (float(x[0]), float(x[1])), "radii": radii, "sphere_avg_over_r": [],
           "sup_over_r": [], "zero_density": [], "lipschitz": []}
    for r in radii:
        n_s = max(64, int(8 * r / grid.h))
        avgs = [
            _sphere_mean(comp, x, r, n_s) / r for comp in sol.u.components
        ]
        out["sphere_avg_over_r"].append(avgs)
        inside = _nodes_in_ball(grid, x, r)
        out["sup_over_r"].append(float(mag[inside].max(initial=0.0)) / r)
        area = ball_integrate_cells(zero_cells, grid, x, r)
        out["zero_density"].append(area / (np.pi * r * r))
        cx, cy = grid.cell_centers()
        rin = r / 3.0
        cells_in = (cx - x[0]) ** 2 + (cy - x[1]) ** 2 <= (rin + 0.5 * grid.h) ** 2
        out["lipschitz"].append(float(grad_cells[cells_in].max(initial=0.0)))
    sups = np.asarray(out["sup_over_r"])
    out["sup_ratio_min"] = float(sups.min())
    out["sup_ratio_max"] = float(sups.max())
    out["growth_spread"] = float(sups.max() / max(sups.min(), 1e-300))
    out["zero_density_min"] = float(min(out["zero_density"]))
    out["lipschitz_max"] = float(max(out["lipschitz"]))
    return out


def _sphere_mean(comp: ScalarField, x, r, n_samples):
    theta = 2 * np.pi * np.arange(n_samples) / n_samples
    pts = np.column_stack([x[0] + r * np.cos(theta), x[1] + r * np.sin(theta)])
    return float(interpolate_many(comp, pts).mean())


def flatness(sol: Solution, x, rho: float, fb: FreeBoundary | None = None) -> tuple[float, np.ndarray]:
    """Smallest sigma such that u vanishes past height sigma*rho in direction nu.

    nu is the fitted interface normal at x; sigma* is the largest projection
    (clipped to [0, 1]) of a positive node in the rho-ball onto nu.
    """
    grid = sol.grid
    if not grid.ball_inside(x, rho):
        raise ValueError("flatness ball exits the domain")
    if fb is None:
        fb = extract_free_boundary(sol.mask)
    if fb.distance(x) > grid.h * (1 + 1e-9):
        raise ValueError("probe point is not within one spacing of the free boundary")
    nu = estimate_normal(fb, x, max(3.2 * grid.h, rho / 4))
    X, Y = grid.meshgrid()
    inside = (X - x[0]) ** 2 + (Y - x[1]) ** 2 <= rho * rho
    pos = inside & sol.mask.flags
    if not pos.any():
        return 0.0, nu
    s = ((X[pos] - x[0]) * nu[0] + (Y[pos] - x[1]) * nu[1]) / rho
    return float(np.clip(s.max(), 0.0, 1.0)), nu


def fb_condition_residual(
    sol: Solution,
    fb: FreeBoundary | None = None,
    offsets=(2.0, 4.0, 8.0),
) -> dict:
    """One-sided slope of |u| at the interface versus Q.

    |u| is probed on a small stencil inside the positivity set -- at
    offsets*h along the inward normal and one spacing to each side -- and an
    affine profile a + s*delta + t*tau is fitted per point.  The gradient
    magnitude sqrt(s^2 + t^2) plays the role of the one-sided normal
    derivative; the intercept and the tangential term absorb the half-cell
    offset of the interface sample and the small angle error of the fitted
    normal, both of which would otherwise bias the slope at first order.
    Reported per point: |gradient - Q|/Q and the residual of
    sum_i |grad u_i|^2 = Q^2.  Points whose probes leave the domain are
    skipped and counted.
    """
    grid = sol.grid
    if fb is None:
        fb = extract_free_boundary(sol.mask)
    if len(fb) == 0:
        raise ValueError("empty free boundary")
    h = grid.h
    deltas = np.asarray(offsets) * h
    taus = np.array([-h, 0.0, h])
    dd, tt = np.meshgrid(deltas, taus, indexing="ij")
    dd = dd.ravel()
    tt = tt.ravel()
    design = np.column_stack([dd, tt, np.ones_like(dd)])
    q_field = ScalarField(grid, sol.q.values)
    records = {"residual": [], "sum_residual": [], "skipped": 0, "points": [], "slopes": []}
    for k in range(len(fb)):
        p = fb.points[k]
        nu = fb.normals[k]
        tang = np.array([-nu[1], nu[0]])
        probes = p[None, :] - dd[:, None] * nu[None, :] + tt[:, None] * tang[None, :]
        if not all(grid.contains(px, py) for px, py in probes):
            records["skipped"] += 1
            continue
        comp_vals = np.stack([interpolate_many(c, probes) for c in sol.u.components])
        mag_vals = np.sqrt(np.sum(comp_vals**2, axis=0))
        coef, *_ = np.linalg.lstsq(design, mag_vals, rcond=None)
        slope = float(np.hypot(coef[0], coef[1]))
        slopes_sq = []
        for i in range(sol.u.m):
            ci, *_ = np.linalg.lstsq(design, comp_vals[i], rcond=None)
            slopes_sq.append(float(ci[0] ** 2 + ci[1] ** 2))
        qx = float(interpolate_many(q_field, p[None, :])[0])
        records["points"].append((float(p[0]), float(p[1])))
        records["slopes"].append([float(np.sqrt(s)) for s in slopes_sq])
        records["residual"].append(abs(slope - qx) / qx)
        records["sum_residual"].append(abs(sum(slopes_sq) - qx * qx) / qx**2)
    if records["residual"]:
        res = np.asarray(records["residual"])
        records["median"] = float(np.median(res))
        records["max"] = float(res.max())
    return records


def weight_traces(sol: Solution, region=None, n_pairs: int = 4000, seed: int = 0) -> dict:
    """w_i = u_i/|u| on the positivity set, with empirical Hoelder seminorms.

    The seminorm for exponent lam is the max of |w_i(p) - w_i(q)| / |p-q|^lam
    over sampled node pairs of the region's positivity set.
    """
    grid = sol.grid
    X, Y = grid.meshgrid()
    sel = sol.mask.flags.copy()
    if region is not None:
        (ax, bx), (ay, by) = region
        sel &= (X >= ax) & (X <= bx) & (Y >= ay) & (Y <= by)
    if not sel.any():
        raise ValueError("region does not intersect the positivity set")
    stacked = sol.u.stacked()
    mag = sol.u.magnitude()
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(sel[None, :, :], stacked / np.maximum(mag, 1e-300)[None, :, :], np.nan)
    ii, jj = np.nonzero(sel)
    rng = np.random.default_rng(seed)
    k = ii.size
    a = rng.integers(0, k, size=n_pairs)
    b = rng.integers(0, k, size=n_pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    dist = np.hypot(X[ii[a], jj[a]] - X[ii[b], jj[b]], Y[ii[a], jj[a]] - Y[ii[b], jj[b]])
    out = {"seminorm": {}, "unit_norm_error": float(np.abs(np.nansum(w * w, axis=0)[sel] - 1.0).max()),
           "w_min": float(np.nanmin(w[:, sel])), "n_nodes": int(k)}
    for lam in (0.25, 0.5):
        best = 0.0
        for i in range(sol.u.m):
            dw = np.abs(w[i, ii[a], jj[a]] - w[i, ii[b], jj[b]])
            best = max(best, float(np.max(dw / dist**lam, initial=0.0)))
        out["seminorm"][str(lam)] = best
    out["fields"] = w
    return out


# ---------------------------------------------------------------------------
# Weiss energy


@dataclass
class WeissCurve:
    center: tuple[float, float]
    radii: np.ndarray
    values: np.ndarray
    tolerances: np.ndarray

    def monotone_defect(self) -> float:
        """Largest drop W(r_i) - W(r_{i+1}) over consecutive radii (0 if none)."""
        diffs = self.values[:-1] - self.values[1:]
        return float(np.max(diffs, initial=0.0))

    def rows(self):
        return zip(self.radii, self.values, self.tolerances)


def weiss_value(sol: Solution, x, r: float, n_sphere: int | None = None) -> float:
    """W(r) = r^-2 * int_{B_r}(|grad u|^2 + Q^2 chi) - r^-3 * int_{bd B_r}|u|^2."""
    grid = sol.grid
    if not grid.ball_inside(x, r):
        raise ValueError("Weiss ball exits the domain")
    grad2 = _grad_sq_cells(sol.u)
    qc = sol.q.cell_values()
    vol_cells = qc * qc * sol.mask.cell_flags()
    bulk = ball_integrate_cells(grad2 + vol_cells, grid, x, r)
    if n_sphere is None:
        n_sphere = max(256, int(16 * r / grid.h))
    theta = 2 * np.pi * np.arange(n_sphere) / n_sphere
    pts = np.column_stack([x[0] + r * np.cos(theta), x[1] + r * np.sin(theta)])
    mag2 = np.zeros(n_sphere)
    for comp in sol.u.components:
        vals = interpolate_many(comp, pts)
        mag2 += vals * vals
    sphere = float(mag2.mean()) * 2 * np.pi * r
    return bulk / r**2 - sphere / r**3


def weiss_curve(sol: Solution, x, radii, tol_coef: float = 2.0) -> WeissCurve:
    """Sampled r -> W(r) with per-radius discretization tolerance tol_coef*Qmax^2*h/r."""
    radii = np.asarray(sorted(float(r) for r in radii))
    if radii.size and radii[0] < 4 * sol.grid.h:
        raise ValueError("radii below 4 grid spacings are under-resolved")
    vals = np.array([weiss_value(sol, x, r) for r in radii])
    tols = tol_coef * sol.q.q_max**2 * sol.grid.h / radii
    return WeissCurve((float(x[0]), float(x[1])), radii, vals, tols)


def write_weiss_csv(curve: WeissCurve, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("r,W,tol\n")
        for r, w, t in curve.rows():
            fh.write(f"{float(r)!r},{float(w)!r},{float(t)!r}\n")


# ---------------------------------------------------------------------------
# integral identities


def _circle_samples(x, r, n):
    theta = 2 * np.pi * np.arange(n) / n
    nu_hat = np.column_stack([np.cos(theta), np.sin(theta)])
    pts = x[None, :] + r * nu_hat
    return pts, nu_hat


def _cell_of_points(grid, pts):
    i = np.clip(((pts[:, 0] - grid.ax) / grid.hx).astype(int), 0, grid.nx - 2)
    j = np.clip(((pts[:, 1] - grid.ay) / grid.hy).astype(int), 0, grid.ny - 2)
    return i, j


def identity_residuals(sol: Solution, x, r: float, psi=None, dpsi=None, fb: FreeBoundary | None = None) -> dict:
    """Residuals of the energy identity, the Pohozaev identity, and the
    domain-variation formula, each normalized by the size of its terms.

    * energy: int_{B_r} |grad u_i|^2 = int_{bd B_r} u_i du_i/dnu, summed over i.
    * Pohozaev (n=2): r * int_{bd B_r}(|grad u|^2 - 2|du/dnu|^2)
      = int_{FB cap B_r} Q^2 (y-x).nu dlength.
    * domain variation: int 2 sum_i (grad u_i . grad)Psi . grad u_i
      - |grad u|^2 div Psi = int_{FB} Q^2 (Psi . nu) dlength
      for Psi compactly supported.
    Zero-magnitude identities report residual exactly 0.
    """
    grid = sol.grid
    if not grid.ball_inside(x, r):
        raise ValueError("identity ball exits the domain")
    x = np.asarray(x, dtype=float)
    if fb is None:
        fb = extract_free_boundary(sol.mask)
    stacked = sol.u.stacked()
    gx, gy = stacked_cell_gradients(stacked, grid)
    grad2_cells = np.sum(gx * gx + gy * gy, axis=0)

    n_s = max(512, int(32 * r / grid.h))
    pts, nu_hat = _circle_samples(x, r, n_s)
    ci, cj = _cell_of_points(grid, pts)
    ds = 2 * np.pi * r / n_s

    # energy identity
    lhs_e = ball_integrate_cells(grad2_cells, grid, x, r)
    u_vals = np.stack([interpolate_many(c, pts) for c in sol.u.components])
    dnu = gx[:, ci, cj] * nu_hat[None, :, 0] + gy[:, ci, cj] * nu_hat[None, :, 1]
    rhs_e = float(np.sum(u_vals * dnu)) * ds
    gross_e = max(abs(lhs_e), abs(rhs_e))
    res_energy = abs(lhs_e - rhs_e) / gross_e if gross_e > 0 else 0.0

    # Pohozaev identity
    grad2_circle = grad2_cells[ci, cj]
    dnu2 = np.sum(dnu * dnu, axis=0)
    lhs_p = r * float(np.sum(grad2_circle - 2 * dnu2)) * ds
    qf = ScalarField(grid, sol.q.values)
    in_ball = np.hypot(fb.points[:, 0] - x[0], fb.points[:, 1] - x[1]) < r
    rhs_p = 0.0
    if in_ball.any():
        qs = interpolate_many(qf, fb.points[in_ball])
        proj = np.sum((fb.points[in_ball] - x[None, :]) * fb.normals[in_ball], axis=1)
        rhs_p = float(np.sum(qs * qs * proj * fb.weights[in_ball]))
    gross_p = max(r * float(np.sum(grad2_circle + 2 * dnu2)) * ds, abs(rhs_p))
    res_poho = abs(lhs_p - rhs_p) / gross_p if gross_p > 0 else 0.0

    # domain variation
    if psi is None:
        res_dv = None
    else:
        cx, cy = grid.cell_centers()
        psi_vals = np.asarray(psi(cx, cy))  # (2, nx-1, ny-1)
        jac = np.asarray(dpsi(cx, cy))  # (2, 2, nx-1, ny-1), jac[a,b] = d psi_a / d x_b
        quad = (
            gx * (jac[0, 0][None] * gx + jac[0, 1][None] * gy)
            + gy * (jac[1, 0][None] * gx + jac[1, 1][None] * gy)
        )
        div = jac[0, 0] + jac[1, 1]
        vol = float(np.sum(2 * np.sum(quad, axis=0) - grad2_cells * div)) * grid.cell_area
        qs = interpolate_many(qf, fb.points)
        psi_fb = np.asarray(psi(fb.points[:, 0], fb.points[:, 1]))
        surf = float(np.sum(qs * qs * np.sum(psi_fb.T * fb.normals, axis=1) * fb.weights))
        gross_d = max(
            float(np.sum(np.abs(2 * np.sum(quad, axis=0)) + np.abs(grad2_cells * div))) * grid.cell_area,
            abs(surf),
        )
        res_dv = abs(vol - surf) / gross_d if gross_d > 0 else 0.0
    return {
        "energy": {"lhs": lhs_e, "rhs": rhs_e, "residual": res_energy},
        "pohozaev": {"lhs": lhs_p, "rhs": rhs_p, "residual": res_poho},
        "domain_variation": None if res_dv is None else {"residual": res_dv},
    }


def measure_residual(sol: Solution, phi, grad_phi, fb: FreeBoundary | None = None) -> float:
    """Weak-form residual of (Laplacian of u_i) = w_i Q dlength on the interface.

    max over components of |-int grad u_i . grad phi - int_FB w_i Q phi|,
    normalized by int_FB Q |phi|; phi must be compactly supported inside the
    domain.
    """
    grid = sol.grid
    if fb is None:
        fb = extract_free_boundary(sol.mask)
    if len(fb) == 0:
        raise ValueError("empty free boundary")
    ring = boundary_ring(grid)
    X, Y = grid.meshgrid()
    edge_vals = np.abs(np.asarray(phi(X[ring], Y[ring])))
    if edge_vals.max(initial=0.0) > 1e-12:
        raise ValueError("test function must vanish on the domain boundary")
    stacked = sol.u.stacked()
    gx, gy = stacked_cell_gradients(stacked, grid)
    cx, cy = grid.cell_centers()
    gphi = np.asarray(grad_phi(cx, cy))  # (2, nx-1, ny-1)
    lhs = -np.sum(gx * gphi[0][None] + gy * gphi[1][None], axis=(1, 2)) * grid.cell_area
    qf = ScalarField(grid, sol.q.values)
    qs = interpolate_many(qf, fb.points)
    phis = np.asarray(phi(fb.points[:, 0], fb.points[:, 1]))
    # non-tangential inside probe for the weight traces at interface points
    probes = fb.points - 2 * grid.h * fb.normals
    comp_probe = np.stack([interpolate_many(c, probes) for c in sol.u.components])
    mags = np.sqrt(np.sum(comp_probe**2, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        w_fb = np.where(mags > 0, comp_probe / np.maximum(mags, 1e-300), 0.0)
    rhs = np.sum(w_fb * (qs * phis * fb.weights)[None, :], axis=1)
    denom = float(np.sum(qs * np.abs(phis) * fb.weights))
    if denom == 0.0:
        return float(np.max(np.abs(lhs - rhs)))
    return float(np.max(np.abs(lhs - rhs)) / denom)


# ---------------------------------------------------------------------------
# non-tangential accessibility


def nta_check(mask: Mask, x, radii, m_param: float = 3.0, density_floor: float = 0.05) -> dict:
    """Corkscrew points and complement density of the positivity set at x.

    For each radius, searches the positivity nodes of the ball for the point
    deepest inside (distance to the zero set and the domain boundary) and
    reports the best achievable corkscrew parameter r/depth; the complement
    density |B_r minus positivity|/|B_r| is compared against the configured
    floor.  Parameters are reported best-achievable; only the density floor
    and corkscrew existence at the given M are pass/fail.
    """
    grid = mask.grid
    flags = mask.flags
    if flags.all():
        # no zero set: depth inside the positivity set is the domain-edge distance
        dist_pos = np.full(grid.shape, np.inf)
    elif not flags.any():
        dist_pos = np.zeros(grid.shape)
    else:
        dist_pos = distance_transform_edt(flags, sampling=(grid.hx, grid.hy))
    X, Y = grid.meshgrid()
    edge_dist = np.minimum.reduce([X - grid.ax, grid.bx - X, Y - grid.ay, grid.by - Y])
    zero_cells = (~(flags[:-1, :-1] | flags[1:, :-1] | flags[:-1, 1:] | flags[1:, 1:])).astype(float)
    out = {"radii": [], "corkscrew_depth": [], "best_m": [], "corkscrew_pass": [],
           "density": [], "density_pass": [], "m_param": m_param, "density_floor": density_floor}
    for r in radii:
        r = float(r)
        if r < 4 * grid.h:
            raise ValueError("radii below 4 grid spacings are under-resolved")
        inside = (X - x[0]) ** 2 + (Y - x[1]) ** 2 <= r * r
        sel = inside & flags
        if not sel.any():
            depth = 0.0
        else:
            depth = float(np.minimum(dist_pos, edge_dist)[sel].max(initial=0.0))
        out["radii"].append(r)
        out["corkscrew_depth"].append(depth)
        out["best_m"].append(r / depth if depth > 0 else float("inf"))
        out["corkscrew_pass"].append(bool(depth > r / m_param))
        if grid.ball_inside(x, r):
            dens = ball_integrate_cells(zero_cells, grid, x, r) / (np.pi * r * r)
        else:
            dens = float("nan")
        out["density"].append(dens)
        out["density_pass"].append(bool(dens >= density_floor) if np.isfinite(dens) else False)
    return out
