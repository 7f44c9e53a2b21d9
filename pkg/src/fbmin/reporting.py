"""Assemble the full diagnostics report for a solution.

Free-boundary points are selected deep inside the domain, a dyadic radius
ladder is built per point, and each requested check contributes one record.
Thresholds follow the regularity theory with non-explicit constants replaced
by configured generous bounds; records carry the measured numbers either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .blowup import classify_regular, default_frame_grid, rescale
from .diagnostics import (
    CheckRecord,
    DiagnosticsReport,
    FreeBoundary,
    extract_free_boundary,
    fb_condition_residual,
    flatness,
    identity_residuals,
    measure_residual,
    nta_check,
    scaling_report,
    weight_traces,
    weiss_curve,
)
from .energy import evaluate_J
from .grid import ScalarField, boundary_ring, interpolate_many
from .hodograph import ellipticity_margin, fb_bc_residual, hodograph_transform, operator_residual, oriented_window_field
from .solver import Solution


@dataclass
class CheckParams:
    """Tunable thresholds of the hard checks (generous, non-explicit constants)."""

    n_points: int = 4
    min_separation: float = 0.15
    top_radius: float = 0.25
    growth_ratio_bound: float = 10.0
    density_floor: float = 0.05
    weiss_slack_h: float = 5.0  # monotonicity slack in units of h
    fb_median_bound: float = 0.15
    corkscrew_m: float = 3.0
    classify_bound: float = 0.8  # profile misfit per unit Q
    subharmonic_slack: float = 1e-6
    flatness_rho_h: float = 24.0  # flatness ball radius in units of h


def select_fb_points(sol: Solution, fb: FreeBoundary, params: CheckParams) -> list:
    """Deep, pairwise-separated interface points for the per-point checks."""
    grid = sol.grid
    margin = np.minimum.reduce(
        [
            fb.points[:, 0] - grid.ax,
            grid.bx - fb.points[:, 0],
            fb.points[:, 1] - grid.ay,
            grid.by - fb.points[:, 1],
        ]
    )
    order = np.argsort(-margin)
    chosen: list[int] = []
    for k in order:
        if margin[k] < max(8 * grid.h, 0.05):
            break
        p = fb.points[k]
        if all(np.hypot(*(p - fb.points[c])) >= params.min_separation for c in chosen):
            chosen.append(int(k))
        if len(chosen) >= params.n_points:
            break
    return chosen


def _radius_ladder(grid, margin, params) -> list:
    top = min(params.top_radius, 0.95 * margin)
    radii = []
    r = top
    while r >= 8 * grid.h * (1 - 1e-12):
        radii.append(r)
        r /= 2.0
    return sorted(radii)


def _bump(center, radius):
    """Smooth compactly supported bump and its gradient factory."""
    cx, cy = center

    def eta(X, Y):
        s2 = ((X - cx) ** 2 + (Y - cy) ** 2) / radius**2
        out = np.zeros_like(np.asarray(s2, dtype=float))
        inside = s2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        return out

    def grad_eta(X, Y):
        s2 = ((X - cx) ** 2 + (Y - cy) ** 2) / radius**2
        val = np.zeros_like(np.asarray(s2, dtype=float))
        inside = s2 < 1.0
        val[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside])) * (-1.0 / (1.0 - s2[inside]) ** 2)
        gx = val * 2 * (X - cx) / radius**2
        gy = val * 2 * (Y - cy) / radius**2
        return np.stack([gx, gy])

    return eta, grad_eta


def run_diagnostics(sol: Solution, checks=None, params: CheckParams | None = None) -> DiagnosticsReport:
    from .config import ALL_CHECKS

    if checks is None:
        checks = ALL_CHECKS
    if params is None:
        params = CheckParams()
    grid = sol.grid
    records: list[CheckRecord] = []
    provenance = {
        "tool": f"fbmin {__version__}",
        "grid": {"box": [grid.ax, grid.bx, grid.ay, grid.by], "nodes": [grid.nx, grid.ny]},
        "m": sol.u.m,
        "energy_total": sol.energy.total,
        "positive_nodes": int(sol.mask.count()),
    }

    fb = None
    fb_error = None
    try:
        fb = extract_free_boundary(sol.mask)
    except ValueError as exc:
        fb_error = str(exc)

    points = []
    if fb is not None:
        points = select_fb_points(sol, fb, params)
    pt_margins = {}
    for k in points:
        p = fb.points[k]
        pt_margins[k] = float(
            min(p[0] - grid.ax, grid.bx - p[0], p[1] - grid.ay, grid.by - p[1])
        )

    fb_needed = {"scaling", "weiss", "fb-condition", "identities", "measure", "nta", "flatness", "blowup-classify", "hodograph"}

    for name in checks:
        if name in fb_needed and fb is None:
            records.append(
                CheckRecord(name, "check requires a free boundary", "fail", {"error": f"no free boundary: {fb_error}"})
            )
            continue
        if name in fb_needed and not points:
            records.append(
                CheckRecord(name, "check requires interface points away from the domain boundary", "fail",
                            {"error": "no interface point has enough margin"})
            )
            continue
        records.append(_run_one(name, sol, fb, points, pt_margins, params))
    return DiagnosticsReport(provenance, records)


def _run_one(name, sol, fb, points, pt_margins, params) -> CheckRecord:
    grid = sol.grid
    h = grid.h
    if name == "admissible":
        stacked = sol.u.stacked()
        min_val = float(stacked.min())
        ring = boundary_ring(grid)
        g_err = float(np.abs(stacked[:, ring] - sol.g.values[:, ring]).max())
        # discrete subharmonicity: 4-neighbor mean at interior nodes is not
        # below the value (solutions are harmonic where positive, zero where not)
        interior = stacked[:, 1:-1, 1:-1]
        nb_mean = 0.25 * (
            stacked[:, :-2, 1:-1] + stacked[:, 2:, 1:-1] + stacked[:, 1:-1, :-2] + stacked[:, 1:-1, 2:]
        )
        sub_defect = float((interior - nb_mean).max())
        slack = params.subharmonic_slack * max(1.0, sol.scale)
        ok = min_val >= 0.0 and g_err == 0.0 and sub_defect <= slack
        return CheckRecord(
            "admissible",
            "solution components are nonnegative, match the boundary data exactly, and are discretely subharmonic",
            "pass" if ok else "fail",
            {"min_value": min_val, "boundary_error": g_err, "subharmonic_defect": sub_defect, "slack": slack},
        )
    if name == "energy":
        recomputed = evaluate_J(sol.u, sol.q, scale=sol.scale)
        err = abs(recomputed.total - sol.energy.total) / max(1.0, abs(recomputed.total))
        return CheckRecord(
            "energy",
            "stored energy equals the recomputed energy to 1e-12 relative",
            "pass" if err <= 1e-12 else "fail",
            {"stored": sol.energy.total, "recomputed": recomputed.total, "relative_error": err},
        )
    if name == "trace":
        tol = 1e-9 * max(1.0, sol.scale) ** 2
        accepted = [r for r in sol.trace if r.accepted]
        mono = all(r.j_after <= r.j_before + tol for r in accepted)
        chain = all(b.j_after <= a.j_after + tol for a, b in zip(accepted, accepted[1:]))
        return CheckRecord(
            "trace",
            "energies of accepted moves are non-increasing along the iteration trace",
            "pass" if (mono and chain) else "fail",
            {"records": len(sol.trace), "accepted": len(accepted), "per_move_monotone": mono, "chain_monotone": chain},
        )
    if name == "scaling":
        worst_ratio = 0.0
        worst_density = 1.0
        details = []
        for k in points:
            radii = _radius_ladder(grid, pt_margins[k], params)
            rep = scaling_report(sol, fb.points[k], radii, fb=fb)
            details.append(rep)
            worst_ratio = max(worst_ratio, rep["growth_spread"])
            worst_density = min(worst_density, rep["zero_density_min"])
        ok = worst_ratio <= params.growth_ratio_bound and worst_density >= params.density_floor and worst_ratio > 0
        return CheckRecord(
            "scaling",
            "sup of |u| over balls at interface points grows linearly in the radius "
            f"(spread of sup/r bounded by {params.growth_ratio_bound}) and the zero set keeps "
            f"volume fraction at least {params.density_floor}",
            "pass" if ok else "fail",
            {"growth_spread_max": worst_ratio, "zero_density_min": worst_density, "points": details},
        )
    if name == "weiss":
        curves = []
        worst = 0.0
        qvar = sol.q.q_max - sol.q.q_min
        for k in points:
            radii = _radius_ladder(grid, pt_margins[k], params)
            curve = weiss_curve(sol, fb.points[k], radii)
            slack = params.weiss_slack_h * h
            if qvar > 0:
                # oscillation of Q enters the monotonicity statement
                slack += 2.0 * sol.q.q_max * qvar * np.log(2.0)
            defect = curve.monotone_defect()
            worst = max(worst, defect - slack)
            curves.append(
                {
                    "center": curve.center,
                    "radii": curve.radii,
                    "values": curve.values,
                    "tolerances": curve.tolerances,
                    "monotone_defect": defect,
                    "slack": slack,
                }
            )
        return CheckRecord(
            "weiss",
            "the scale-normalized boundary-adjusted energy W(r) is nondecreasing in r "
            "at interface points, within the discretization slack",
            "pass" if worst <= 0 else "fail",
            {"curves": curves, "worst_excess_defect": worst},
        )
    if name == "fb-condition":
        res = fb_condition_residual(sol, fb=fb)
        med = res.get("median", float("nan"))
        ok = np.isfinite(med) and med <= params.fb_median_bound
        return CheckRecord(
            "fb-condition",
            "the one-sided slope of |u| along the inward normal equals Q at interface "
            f"points (median relative residual at most {params.fb_median_bound})",
            "pass" if ok else "fail",
            {"median": med, "max": res.get("max"), "skipped": res["skipped"], "n_points": len(res["residual"])},
        )
    if name == "traces":
        out = weight_traces(sol)
        ok = out["unit_norm_error"] <= 1e-12 and out["w_min"] >= -1e-12
        return CheckRecord(
            "traces",
            "the component weights w_i = u_i/|u| are nonnegative with sum of squares 1 "
            "on the positivity set; empirical Hoelder seminorms are reported",
            "pass" if ok else "fail",
            {"unit_norm_error": out["unit_norm_error"], "w_min": out["w_min"], "seminorm": out["seminorm"], "n_nodes": out["n_nodes"]},
        )
    if name == "identities":
        eta, grad_eta = _bump(((grid.ax + grid.bx) / 2, (grid.ay + grid.by) / 2), 0.4 * min(grid.bx - grid.ax, grid.by - grid.ay))
        psi = lambda X, Y: np.stack([eta(X, Y), 0.5 * eta(X, Y)])
        dpsi = lambda X, Y: np.stack([grad_eta(X, Y), 0.5 * grad_eta(X, Y)], axis=0).swapaxes(0, 1)
        details = []
        for k in points:
            r = min(0.8 * pt_margins[k], params.top_radius)
            out = identity_residuals(sol, fb.points[k], r, psi=psi, dpsi=dpsi, fb=fb)
            details.append({"center": tuple(fb.points[k]), "r": r, **out})
        return CheckRecord(
            "identities",
            "residuals of the boundary energy identity, the scaling (Pohozaev-type) "
            "identity, and the domain-variation formula",
            "info",
            {"points": details},
        )
    if name == "measure":
        k = points[0]
        eta, grad_eta = _bump(tuple(fb.points[k]), min(0.8 * pt_margins[k], 0.35))
        val = measure_residual(sol, eta, grad_eta, fb=fb)
        return CheckRecord(
            "measure",
            "the distributional Laplacian of each component equals w_i Q times the "
            "interface length measure (weak-form residual, normalized)",
            "info",
            {"residual": val, "center": tuple(fb.points[k])},
        )
    if name == "nta":
        details = []
        ok = True
        for k in points:
            radii = _radius_ladder(grid, pt_margins[k], params)
            rep = nta_check(sol.mask, fb.points[k], radii, m_param=params.corkscrew_m, density_floor=params.density_floor)
            ok = ok and all(rep["density_pass"])
            details.append({"center": tuple(fb.points[k]), **rep})
        return CheckRecord(
            "nta",
            "the positivity set admits corkscrew points (best parameter reported) and "
            f"its complement keeps density at least {params.density_floor} near the interface",
            "pass" if ok else "fail",
            {"points": details},
        )
    if name == "flatness":
        details = []
        for k in points:
            rho = min(params.flatness_rho_h * h, 0.9 * pt_margins[k])
            sigma, nu = flatness(sol, fb.points[k], rho, fb=fb)
            details.append({"center": tuple(fb.points[k]), "rho": rho, "sigma": sigma, "nu": tuple(nu)})
        return CheckRecord(
            "flatness",
            "smallest flatness sigma such that u vanishes past height sigma*rho in the "
            "fitted normal direction at interface points",
            "info",
            {"points": details},
        )
    if name == "blowup-classify":
        details = []
        worst = 0.0
        qf = ScalarField(grid, sol.q.values)
        for k in points:
            r = min(16 * h, 0.45 * pt_margins[k])
            frame = rescale(sol.u, fb.points[k], r, default_frame_grid(65))
            qx = float(interpolate_many(qf, fb.points[k][None, :])[0])
            fit = classify_regular(frame, qx)
            rel = fit["residual"] / qx
            worst = max(worst, rel)
            details.append({"center": tuple(fb.points[k]), "r": r, **fit, "relative_residual": rel})
        return CheckRecord(
            "blowup-classify",
            "unit-scale rescalings at interface points are close to a half-plane "
            f"profile Q (nu . y)^+ e (sup misfit per unit Q at most {params.classify_bound})",
            "pass" if worst <= params.classify_bound else "fail",
            {"points": details, "worst_relative_residual": worst},
        )
    if name == "hodograph":
        return _hodograph_check(sol, fb, points, pt_margins, params)
    return CheckRecord(name, "unknown check", "fail", {"error": f"unknown check '{name}'"})


def _hodograph_check(sol, fb, points, pt_margins, params) -> CheckRecord:
    grid = sol.grid
    h = grid.h
    # pick the flattest of the candidate points
    best = None
    for k in points:
        rho = min(params.flatness_rho_h * h, 0.9 * pt_margins[k])
        try:
            sigma, nu = flatness(sol, fb.points[k], rho, fb=fb)
        except ValueError:
            continue
        if best is None or sigma < best[1]:
            best = (k, sigma, nu)
    if best is None:
        return CheckRecord("hodograph", "straightened-patch residuals at the flattest interface point", "fail",
                           {"error": "no usable interface point"})
    k, sigma, nu = best
    center = fb.points[k]
    half_width = min(12 * h, 0.45 * pt_margins[k])
    depth_above = min(28 * h, 0.85 * pt_margins[k])
    try:
        local, origin, rot = oriented_window_field(
            sol.u, center, nu, half_width, 4 * h, depth_above, nodes=(49, 49)
        )
        values = {}
        for tag, nodes in (("coarse", (17, 9)), ("fine", (33, 17))):
            patch = hodograph_transform(
                local,
                ((-half_width, half_width), (-2 * h, depth_above)),
                ygrid_nodes=nodes,
                world_origin=origin,
                world_rot=rot,
            )
            res = operator_residual(patch)
            values[tag] = {
                "operator_residual_max": res["overall_max"],
                "bc_residual_max": float(fb_bc_residual(patch, sol.q).max()),
                "ellipticity_margin": ellipticity_margin(patch),
                "roundtrip_error": patch.roundtrip_error,
                "smoothing_error": patch.smoothing_error,
            }
    except ValueError as exc:
        return CheckRecord("hodograph", "straightened-patch residuals at the flattest interface point", "fail",
                           {"error": str(exc), "center": tuple(center), "sigma": sigma})
    margin_ok = values["fine"]["ellipticity_margin"] > 0
    roundtrip_ok = values["fine"]["roundtrip_error"] <= 1e-9 * max(1.0, sol.scale)
    coarse, fine = values["coarse"]["operator_residual_max"], values["fine"]["operator_residual_max"]
    factor = coarse / fine if fine > 1e-10 * max(1.0, sol.scale) else float("inf")
    return CheckRecord(
        "hodograph",
        "the straightening map near the flattest interface point is monotone and "
        "invertible, its quasilinear operator is uniformly elliptic, and the operator "
        "residual shrinks under y-grid refinement",
        "pass" if (margin_ok and roundtrip_ok) else "fail",
        {"center": tuple(center), "sigma": sigma, "refinement_factor": factor, **values},
    )
