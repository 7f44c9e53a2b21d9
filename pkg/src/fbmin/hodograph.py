"""Partial hodograph / Legendre straightening of a flat free-boundary patch.

In a window where the first component is strictly increasing upward and the
free boundary is the u1 = 0 level at the bottom, the map y = (x', u1(x))
straightens the interface onto {y_n = 0}.  Its inverse height function v1
(and the companions v_k = u_k after the change of variables) satisfy a
quasilinear elliptic equation L(v1)v = 0 with the squared slope condition

    Q^2 = (1 + |d_y' v1|^2) / (d_yn v1)^2 * (1 + sum_k (d_yn v_k)^2)

on the straightened boundary.  This module builds the patch, evaluates the
discrete operator and boundary-condition residuals, and measures the
ellipticity margin of L(v1).

Column samples are smoothed by a least-squares cubic before inversion: the
raw piecewise-bilinear interpolant has O(h) slope kinks that do not shrink
under y-grid refinement, while the smooth fit restores the second-order
behavior of the central differences.  On affine data the fit is exact, so
all exactness claims are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, ScalarField, VectorField, WeightField, interpolate_many, make_grid, vector_field

BISECT_ITERS = 60


@dataclass
class HodographPatch:
    ygrid: GridSpec  # y' along the first axis, y_n (the u1 level) along the second
    v1: np.ndarray  # inverse height x_n = v1(y), shape ygrid.shape
    companions: list  # v_k = u_k after the change of variables, k >= 2
    d_yn_v1: np.ndarray
    d_yp_v1: np.ndarray
    window: tuple  # source window ((x0,x1),(y0,y1)) in patch coordinates
    roundtrip_error: float  # max |y_n - u1(y', v1(y))| against the column models
    smoothing_error: float  # max |column model - raw bilinear| over the samples
    world_origin: tuple = (0.0, 0.0)  # patch -> world affine map for Q lookups
    world_rot: tuple = ((1.0, 0.0), (0.0, 1.0))

    def to_world(self, px, py):
        r = self.world_rot
        return (
            self.world_origin[0] + r[0][0] * px + r[0][1] * py,
            self.world_origin[1] + r[1][0] * px + r[1][1] * py,
        )


def hodograph_transform(
    u: VectorField,
    window,
    ygrid_nodes=(33, 17),
    yn_max: float | None = None,
    pos_tol: float = 0.0,
    world_origin=(0.0, 0.0),
    world_rot=((1.0, 0.0), (0.0, 1.0)),
) -> HodographPatch:
    """Straighten the free boundary inside the window.

    The window is ((x0, x1), (y0, y1)) with the interface near the bottom and
    u1 strictly increasing upward (checked).  v1 is found per column by
    monotone bisection of the column model of u1; derivative estimates use
    central differences on the y-grid.
    """
    src = u.grid
    (wx0, wx1), (wy0, wy1) = window
    if not (src.ax - 1e-12 <= wx0 < wx1 <= src.bx + 1e-12 and src.ay - 1e-12 <= wy0 < wy1 <= src.by + 1e-12):
        raise ValueError("window exits the source domain")
    npz = max(8, int(np.ceil((wy1 - wy0) / src.hy)) + 1)
    zs = np.linspace(wy0, wy1, npz)
    n_yp, n_yn = ygrid_nodes
    if n_yp < 3 or n_yn < 3:
        raise ValueError("y-grid needs at least 3 nodes per axis")
    yps = np.linspace(wx0, wx1, n_yp)

    scale = float(np.max(np.abs(u.stacked()), initial=0.0))
    if scale == 0.0:
        raise ValueError("field vanishes in the window")
    if pos_tol <= 0.0:
        pos_tol = 1e-12 * scale

    # pass 1: per-column samples and fitting spans (skipping the samples next
    # to the kink, where bilinear interpolation of the truncated profile is
    # polluted at first order)
    col_vals = []
    col_k0 = []
    for yp in yps:
        pts = np.column_stack([np.full(npz, yp), zs])
        vals = np.stack([interpolate_many(c, pts) for c in u.components])
        v1 = vals[0]
        positive = np.nonzero(v1 > pos_tol)[0]
        if positive.size < 4:
            raise ValueError(f"column x'={yp:.6g}: too few positive samples of the first component")
        k0 = positive[0]
        if not np.all(v1[k0:] > pos_tol):
            raise ValueError(f"column x'={yp:.6g}: first component is not positive up to the window top")
        if npz - k0 >= 8:
            k0 += 2
        col_vals.append(vals)
        col_k0.append(k0)

    span_min = npz - max(col_k0)
    # degree grows with the sample count so tall windows are not forced
    # through a rigid low-order fit; affine data stays exact at any degree
    deg_z = min(7, max(3, span_min // 10), span_min - 1)
    domain = [wy0, wy1]
    coef = np.empty((u.m, n_yp, deg_z + 1))
    smoothing_err = 0.0
    for a in range(n_yp):
        zc = zs[col_k0[a] :]
        for i in range(u.m):
            p = np.polynomial.Polynomial.fit(zc, col_vals[a][i, col_k0[a] :], deg_z, domain=domain)
            coef[i, a] = p.coef
            if i == 0:
                smoothing_err = max(smoothing_err, float(np.max(np.abs(p(zc) - col_vals[a][0, col_k0[a] :]))))

    # pass 2: smooth the fitted coefficients across columns, so the inverted
    # surface is smooth in both variables (independent per-column fits carry
    # sampling noise that second differences across columns would amplify)
    if n_yp >= 6:
        deg_x = min(6, max(3, n_yp // 4), n_yp - 1)
        for i in range(u.m):
            for d in range(deg_z + 1):
                px = np.polynomial.Polynomial.fit(yps, coef[i, :, d], deg_x)
                coef[i, :, d] = px(yps)

    models = []
    col_tops = []
    limit = wy1 - wy0
    for a, yp in enumerate(yps):
        polys = [np.polynomial.Polynomial(coef[i, a], domain=domain) for i in range(u.m)]
        p1 = polys[0]
        dp1 = p1.deriv()
        zc = zs[col_k0[a] :]
        if np.any(dp1(zc) <= 0):
            raise ValueError(f"column x'={yp:.6g}: monotonicity violation of the first component")
        # bracket for inversion: extend below the first fitted sample until
        # the column model reaches the zero level, while it stays monotone
        z_lo = zs[max(col_k0[a] - 1, 0)]
        extended = 0.0
        while p1(z_lo) > 0.0 and dp1(z_lo) > 0.0 and extended < limit:
            z_lo -= src.hy
            extended += src.hy
        models.append((polys, z_lo, float(zs[-1])))
        col_tops.append(float(p1(zs[-1])))

    top = min(col_tops)
    if yn_max is None:
        yn_max = 0.9 * top
    if yn_max > top:
        raise ValueError(f"requested level {yn_max:.6g} above the column maximum {top:.6g}")
    if yn_max <= 0:
        raise ValueError("y_n range must be positive")
    ygrid = make_grid(((wx0, wx1), (0.0, yn_max)), (n_yp, n_yn))
    yns = ygrid.ys()

    v1 = np.empty(ygrid.shape)
    comps = [np.empty(ygrid.shape) for _ in range(u.m - 1)]
    roundtrip = 0.0
    for a, (polys, z_lo, z_hi) in enumerate(models):
        p1 = polys[0]
        lo_val = p1(z_lo)
        for b, yn in enumerate(yns):
            if lo_val > yn:
                # monotone extension: bisection bracket must contain the level
                raise ValueError(
                    f"column x'={yps[a]:.6g}: level {yn:.6g} below the invertible range"
                )
            lo, hi = z_lo, z_hi
            for _ in range(BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                if p1(mid) < yn:
                    lo = mid
                else:
                    hi = mid
            x_n = 0.5 * (lo + hi)
            v1[a, b] = x_n
            roundtrip = max(roundtrip, abs(float(p1(x_n)) - yn))
            for k in range(1, u.m):
                comps[k - 1][a, b] = float(polys[k](x_n))

    d_yn = _central_diff(v1, ygrid.hy, axis=1)
    d_yp = _central_diff(v1, ygrid.hx, axis=0)
    if np.any(d_yn <= 0):
        raise ValueError("inverse height is not increasing in the level variable")
    return HodographPatch(
        ygrid,
        v1,
        comps,
        d_yn,
        d_yp,
        window,
        roundtrip,
        smoothing_err,
        tuple(world_origin),
        tuple(tuple(r) for r in world_rot),
    )


def _central_diff(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    out = np.empty_like(f)
    f = np.moveaxis(f, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    o[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    o[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return out


def _second_diff(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    out = np.full_like(f, np.nan)
    f = np.moveaxis(f, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / (h * h)
    return out


def _operator_coefficients(patch: HodographPatch):
    a = (1.0 + patch.d_yp_v1**2) / patch.d_yn_v1**2
    b = patch.d_yp_v1 / patch.d_yn_v1
    return a, b


def apply_operator(patch: HodographPatch, f: np.ndarray) -> np.ndarray:
    """Discrete L(v1) f on interior y-nodes (NaN on the boundary ring)."""
    g = patch.ygrid
    if g.nx < 3 or g.ny < 3:
        raise ValueError("patch interior needs at least 3 nodes per axis")
    a, b = _operator_coefficients(patch)
    fnn = _second_diff(f, g.hy, axis=1)
    fpp = _second_diff(f, g.hx, axis=0)
    fn = _central_diff(f, g.hy, axis=1)
    fpn = _central_diff(fn, g.hx, axis=0)
    return a * fnn + fpp - 2 * b * fpn


def operator_residual(patch: HodographPatch) -> dict:
    """Fields L(v1)v1 and L(v1)v_k on interior y-nodes, plus their max norms."""
    fields = {"v1": apply_operator(patch, patch.v1)}
    for k, comp in enumerate(patch.companions, start=2):
        fields[f"v{k}"] = apply_operator(patch, comp)
    interior = (slice(1, -1), slice(1, -1))
    maxima = {name: float(np.max(np.abs(f[interior]))) for name, f in fields.items()}
    return {"fields": fields, "max": maxima, "overall_max": max(maxima.values())}


def fb_bc_residual(patch: HodographPatch, q: WeightField) -> np.ndarray:
    """Per-column residual of the squared slope condition on {y_n = 0}.

    |Q^2 - (1 + |d_y' v1|^2)/(d_yn v1)^2 * (1 + sum (d_yn v_k)^2)| / Q^2,
    with one-sided differences in y_n on the boundary row.
    """
    g = patch.ygrid
    if g.ny < 3:
        raise ValueError("patch is missing interior rows above the boundary")
    yps = g.xs()
    d_yn_v1 = patch.d_yn_v1[:, 0]
    d_yp_v1 = patch.d_yp_v1[:, 0]
    s = 1.0
    rhs_factor = np.ones(g.nx)
    for comp in patch.companions:
        d_yn_vk = _central_diff(comp, g.hy, axis=1)[:, 0]
        rhs_factor += d_yn_vk**2
    rhs = (1.0 + d_yp_v1**2) / d_yn_v1**2 * rhs_factor
    qf = ScalarField(q.grid, q.values)
    wx, wy = patch.to_world(yps, patch.v1[:, 0])
    q_vals = interpolate_many(qf, np.column_stack([wx, wy]))
    return np.abs(q_vals**2 - rhs) / q_vals**2


def ellipticity_margin(patch: HodographPatch) -> float:
    """Smallest eigenvalue over y-nodes of the coefficient matrix of L(v1).

    In (y', y_n) ordering the matrix is [[1, -b], [-b, a]]; a healthy patch
    has a strictly positive margin.
    """
    a, b = _operator_coefficients(patch)
    tr = 1.0 + a
    disc = np.sqrt((a - 1.0) ** 2 + 4.0 * b * b)
    return float(np.min(0.5 * (tr - disc)))


def oriented_window_field(
    u: VectorField,
    center,
    normal,
    half_width: float,
    depth_below: float,
    depth_above: float,
    nodes=(65, 65),
) -> tuple[VectorField, tuple, tuple]:
    """Resample u on a rotated local frame whose upward axis points into the
    positivity set (opposite the outward interface normal at the center).

    Returns the local field together with (origin, rotation) mapping local to
    world coordinates; the interface sits near the local height 0.
    """
    nrm = np.asarray(normal, dtype=float)
    nrm = nrm / np.linalg.norm(nrm)
    up = -nrm  # into the positivity set
    tangent = np.array([-up[1], up[0]])
    loc = make_grid(((-half_width, half_width), (-depth_below, depth_above)), nodes)
    T, S = loc.meshgrid()
    wx = center[0] + tangent[0] * T + up[0] * S
    wy = center[1] + tangent[1] * T + up[1] * S
    src = u.grid
    if (
        wx.min() < src.ax - 1e-12
        or wx.max() > src.bx + 1e-12
        or wy.min() < src.ay - 1e-12
        or wy.max() > src.by + 1e-12
    ):
        raise ValueError("oriented window exits the source domain")
    pts = np.column_stack([wx.ravel(), wy.ravel()])
    arrays = [interpolate_many(c, pts).reshape(loc.shape) for c in u.components]
    origin = (float(center[0]), float(center[1]))
    rot = ((float(tangent[0]), float(up[0])), (float(tangent[1]), float(up[1])))
    return vector_field(loc, arrays), origin, rot
