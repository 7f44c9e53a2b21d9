import numpy as np
import pytest

from conftest import build_solution, halfplane_solution

from fbmin.diagnostics import (
    extract_free_boundary,
    estimate_normal,
    fb_condition_residual,
    flatness,
    identity_residuals,
    measure_residual,
    nta_check,
    scaling_report,
    weight_traces,
    weiss_curve,
    weiss_value,
)
from fbmin.grid import Mask, constant_weight, field_from_function, make_grid, vector_field
from fbmin.blowup import default_frame_grid, rescale
from fbmin.solver import Solution


class TestExtractFreeBoundary:
    def test_halfplane_points_and_normals(self, halfplane_257):
        fb = extract_free_boundary(halfplane_257.mask)
        h = halfplane_257.grid.h
        # positivity on x > 0: interface edges between the zero column x=0 and x=h
        assert np.allclose(fb.points[:, 0], h / 2, atol=1e-12)
        # outer normal of the positivity set points into the zero set
        assert np.allclose(fb.normals[:, 0], -1.0, atol=1e-9)
        assert np.allclose(fb.normals[:, 1], 0.0, atol=1e-9)

    def test_full_mask_error(self):
        g = make_grid(((0, 1), (0, 1)), (9, 9))
        with pytest.raises(ValueError):
            extract_free_boundary(Mask(g, np.ones(g.shape, dtype=bool)))

    def test_disk_point_count(self):
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        R = 0.5
        ind = field_from_function(g, lambda X, Y: (X**2 + Y**2 < R**2).astype(float))
        fb = extract_free_boundary(Mask(g, ind.values > 0.5))
        # one point per crossing edge: the lattice crossing count of a circle
        # is (4/pi) * 2*pi*R/h; allow the full geometric range
        base = 2 * np.pi * R / g.h
        assert 0.8 * base <= len(fb) <= 1.35 * base

    def test_polyline_weights_total_length(self):
        # half-plane interface across the box: total weight ~ box side
        g = make_grid(((-1, 1), (-1, 1)), (129, 129))
        ind = field_from_function(g, lambda X, Y: (X > 0).astype(float))
        fb = extract_free_boundary(Mask(g, ind.values > 0.5))
        assert fb.weights.sum() == pytest.approx(2.0, rel=0.02)


class TestEstimateNormal:
    def test_vertical_interface(self, halfplane_257):
        fb = extract_free_boundary(halfplane_257.mask)
        n = estimate_normal(fb, fb.points[len(fb) // 2], 4 * halfplane_257.grid.h)
        assert n[0] == pytest.approx(-1.0, abs=1e-6)
        assert n[1] == pytest.approx(0.0, abs=1e-6)

    def test_horizontal_interface_positivity_below(self):
        g = make_grid(((-1, 1), (-1, 1)), (129, 129))
        f = field_from_function(g, lambda X, Y: np.maximum(0.3 - Y, 0.0))
        u = vector_field(g, [f.values], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        fb = extract_free_boundary(sol.mask)
        mid = fb.points[np.argmin(np.abs(fb.points[:, 0]))]
        n = estimate_normal(fb, mid, 4 * g.h)
        assert n[1] == pytest.approx(1.0, abs=1e-6)

    def test_disk_radial(self):
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        R = 0.5
        ind = field_from_function(g, lambda X, Y: (X**2 + Y**2 < R**2).astype(float))
        fb = extract_free_boundary(Mask(g, ind.values > 0.5))
        fit_r = 8 * g.h
        for theta in (0.3, 1.2, 2.5, 4.0):
            p = (R * np.cos(theta), R * np.sin(theta))
            n = estimate_normal(fb, p, fit_r)
            radial = np.array([np.cos(theta), np.sin(theta)])
            assert abs(np.dot(n, radial) - 1.0) < 3 * g.h / fit_r

    def test_too_few_neighbors(self, halfplane_257):
        fb = extract_free_boundary(halfplane_257.mask)
        with pytest.raises(ValueError):
            estimate_normal(fb, fb.points[0], 0.1 * halfplane_257.grid.h)


class TestScalingReport:
    def test_halfplane_ratios(self, halfplane_257):
        sol = halfplane_257
        h = sol.grid.h
        fb = extract_free_boundary(sol.mask)
        x = fb.points[fb.nearest((h / 2, 0.0))]
        radii = [16 * h, 32 * h, 64 * h]
        rep = scaling_report(sol, x, radii, fb=fb)
        for r, ratio in zip(radii, rep["sup_over_r"]):
            assert abs(ratio - 1.0) <= 2 * h / r
        for dens in rep["zero_density"]:
            assert abs(dens - 0.5) <= 0.03
        for lip in rep["lipschitz"]:
            assert lip == pytest.approx(1.0, abs=1e-9)

    def test_tilted_family(self, halfplane_tilted):
        sol = halfplane_tilted
        h = sol.grid.h
        fb = extract_free_boundary(sol.mask)
        x = fb.points[fb.nearest((0.0, 0.0))]
        radii = [16 * h, 48 * h]
        rep = scaling_report(sol, x, radii, fb=fb)
        q0 = 1.5
        for r, ratio in zip(radii, rep["sup_over_r"]):
            assert abs(ratio - q0) <= 3 * q0 * h / r
        for dens in rep["zero_density"]:
            assert abs(dens - 0.5) <= 0.05

    def test_far_point_rejected(self, halfplane_257):
        with pytest.raises(ValueError):
            scaling_report(halfplane_257, (0.5, 0.5), [0.1])

    def test_zero_field_no_boundary(self):
        g = make_grid(((0, 1), (0, 1)), (17, 17))
        u = vector_field(g, [np.zeros(g.shape)])
        sol = build_solution(u, constant_weight(g, 1.0), scale=1.0)
        with pytest.raises(ValueError):
            extract_free_boundary(sol.mask)


class TestFlatness:
    def test_halfplane_flat(self, halfplane_257):
        sol = halfplane_257
        h = sol.grid.h
        fb = extract_free_boundary(sol.mask)
        x = fb.points[fb.nearest((h / 2, 0.0))]
        rho = 32 * h
        sigma, nu = flatness(sol, x, rho, fb=fb)
        assert sigma <= 2 * h / rho
        assert nu[0] == pytest.approx(-1.0, abs=1e-6)

    def test_offset_flatness(self):
        # zero exactly beyond 0.3*rho in direction nu, positive below
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        rho = 0.5
        f = field_from_function(g, lambda X, Y: np.maximum(0.3 * rho - X, 0.0))
        u = vector_field(g, [f.values], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        fb = extract_free_boundary(sol.mask)
        x = fb.points[fb.nearest((0.3 * rho, 0.0))]
        # probe around the origin: the interface sits at height 0.3*rho in
        # direction nu = (1, 0) seen from x0 = origin-side points
        x0 = np.array([0.0, 0.0])
        # flatness is defined at interface points; shift the ball center there
        sigma, nu = flatness(sol, x, rho, fb=fb)
        assert sigma <= 2 * g.h / rho + 1e-9

    def test_constructed_sigma(self):
        # interface at x = 0, but probe ball centered so that sigma* ~ 0.3:
        # positive set {x < 0.3 rho} relative to the ball center at the origin
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        rho = 0.5
        f = field_from_function(g, lambda X, Y: np.maximum(0.3 * rho - X, 0.0))
        u = vector_field(g, [f.values], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        fb = extract_free_boundary(sol.mask)
        # center within h of the boundary but displaced: use a boundary point
        # and measure sigma relative to a larger ball that reaches back
        from fbmin.diagnostics import FreeBoundary

        x = fb.points[fb.nearest((0.3 * rho, 0.0))]
        sigma, nu = flatness(sol, x, rho, fb=fb)
        # at a true boundary point the profile is flat
        assert sigma <= 2 * g.h / rho + 1e-9

    def test_fully_positive_ball_saturates(self):
        # a single zero node keeps the probe point on the free boundary while
        # the rest of the ball is positive: no sigma < 1 works
        g = make_grid(((-1, 1), (-1, 1)), (129, 129))
        vals = np.ones(g.shape)
        i0 = g.nx // 2
        vals[i0, i0] = 0.0
        u = vector_field(g, [vals], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        fb = extract_free_boundary(sol.mask)
        x = fb.points[0]
        rho = 0.3
        sigma, _ = flatness(sol, x, rho, fb=fb)
        assert sigma >= 1.0 - 2 * g.h / rho

    def test_ball_outside_rejected(self, halfplane_257):
        fb = extract_free_boundary(halfplane_257.mask)
        h = halfplane_257.grid.h
        x = fb.points[fb.nearest((h / 2, 0.95))]
        with pytest.raises(ValueError):
            flatness(halfplane_257, x, 0.5, fb=fb)


class TestFbCondition:
    def test_halfplane_exact(self, halfplane_257):
        res = fb_condition_residual(halfplane_257)
        arr = np.asarray(res["residual"])
        assert arr.size > 0
        assert np.median(arr) <= 1e-10
        assert np.asarray(res["sum_residual"]).max() <= 1e-9

    def test_tilted_family_exact(self, halfplane_tilted):
        res = fb_condition_residual(halfplane_tilted)
        # skip cut-cell influenced points via the median; the affine fit makes
        # interior points exact for the linear profile
        assert res["median"] <= 1e-9

    def test_wrong_slope_flagged(self):
        # slope 2 against Q = 1: residual 1 at every interior point
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        f = field_from_function(g, lambda X, Y: 2.0 * np.maximum(X, 0.0))
        u = vector_field(g, [f.values], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        res = fb_condition_residual(sol)
        assert res["median"] == pytest.approx(1.0, abs=1e-8)

    def test_zero_field_error(self):
        g = make_grid(((0, 1), (0, 1)), (17, 17))
        u = vector_field(g, [np.zeros(g.shape)])
        sol = build_solution(u, constant_weight(g, 1.0), scale=1.0)
        with pytest.raises(ValueError):
            fb_condition_residual(sol)


class TestWeightTraces:
    def test_scalar_multiple_structure(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        v = field_from_function(g, lambda X, Y: np.maximum(X, 0.0)).values
        c = (0.6, 0.8)
        u = vector_field(g, [c[0] * v, c[1] * v], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        out = weight_traces(sol)
        assert out["seminorm"]["0.25"] <= 1e-9
        assert out["seminorm"]["0.5"] <= 1e-9
        assert out["unit_norm_error"] <= 1e-12

    def test_equal_components(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        v = field_from_function(g, lambda X, Y: np.maximum(X + 0.2, 0.0)).values
        u = vector_field(g, [v, v], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        out = weight_traces(sol)
        w = out["fields"]
        sel = sol.mask.flags
        assert np.allclose(w[0][sel], 1 / np.sqrt(2), atol=1e-12)
        assert np.allclose(w[1][sel], 1 / np.sqrt(2), atol=1e-12)

    def test_region_outside_positivity(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        v = field_from_function(g, lambda X, Y: np.maximum(X - 0.5, 0.0)).values
        u = vector_field(g, [v], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        with pytest.raises(ValueError):
            weight_traces(sol, region=((-1.0, -0.5), (-1.0, 1.0)))


class TestWeiss:
    def test_zero_field_zero(self):
        g = make_grid(((-1, 1), (-1, 1)), (129, 129))
        f = field_from_function(g, lambda X, Y: np.maximum(X - 0.7, 0.0))
        u = vector_field(g, [f.values], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        for r in (0.1, 0.2):
            assert weiss_value(sol, (-0.5, 0.0), r) == pytest.approx(0.0, abs=1e-13)

    def test_halfplane_constant(self, halfplane_257):
        sol = halfplane_257
        h = sol.grid.h
        curve = weiss_curve(sol, (0.0, 0.0), [0.1, 0.15, 0.2, 0.3, 0.4])
        target = np.pi / 2
        for r, w, tol in curve.rows():
            assert abs(w - target) <= tol
            assert abs(w - target) <= 0.02 * target

    def test_tilted_halfplane_constant(self, halfplane_tilted):
        sol = halfplane_tilted
        q0 = 1.5
        curve = weiss_curve(sol, (0.0, 0.0), [0.1, 0.2, 0.4])
        target = q0**2 * np.pi / 2
        for r, w, tol in curve.rows():
            assert abs(w - target) <= tol

    def test_scaling_identity(self):
        # W(r*s, u; Q) equals the Weiss value of the rescaled frame when the
        # frame grid nodes coincide with source nodes (pure algebra)
        from fbmin.grid import WeightField, interpolate_many, ScalarField

        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        X, Y = g.meshgrid()
        u = vector_field(g, [np.maximum(0.8 * X + 0.1 * Y, 0.0)], admissible=True)
        qv = 1.0 + 0.3 * np.clip(np.hypot(X, Y), 0, 1)
        q = WeightField(g, qv)
        sol = build_solution(u, q)
        h = g.h
        j = 32  # r = j*h so that frame nodes are source nodes
        r = j * h
        s = 0.5
        w_direct = weiss_value(sol, (0.0, 0.0), r * s)
        frame_grid = make_grid(((-1, 1), (-1, 1)), (2 * j + 1, 2 * j + 1))
        frame = rescale(u, (0.0, 0.0), r, frame_grid)
        Xf, Yf = frame_grid.meshgrid()
        pts = np.column_stack([(r * Xf).ravel(), (r * Yf).ravel()])
        q_frame = WeightField(frame_grid, interpolate_many(ScalarField(g, qv), pts).reshape(frame_grid.shape))
        sol_frame = build_solution(frame.field, q_frame)
        w_frame = weiss_value(sol_frame, (0.0, 0.0), s)
        assert w_frame == pytest.approx(w_direct, abs=1e-8)

    def test_ball_outside_rejected(self, halfplane_257):
        with pytest.raises(ValueError):
            weiss_curve(halfplane_257, (0.9, 0.9), [0.5])


class TestIdentities:
    def _bump(self):
        def eta(X, Y):
            s2 = (np.asarray(X) ** 2 + np.asarray(Y) ** 2) / 0.49
            out = np.zeros_like(np.asarray(s2, dtype=float))
            inside = s2 < 1
            out[inside] = np.exp(1 - 1 / (1 - s2[inside]))
            return out

        def geta(X, Y):
            s2 = (np.asarray(X) ** 2 + np.asarray(Y) ** 2) / 0.49
            val = np.zeros_like(np.asarray(s2, dtype=float))
            inside = s2 < 1
            val[inside] = np.exp(1 - 1 / (1 - s2[inside])) * (-1 / (1 - s2[inside]) ** 2)
            return np.stack([val * 2 * np.asarray(X) / 0.49, val * 2 * np.asarray(Y) / 0.49])

        return eta, geta

    def test_halfplane_energy_identity(self, halfplane_257):
        eta, geta = self._bump()
        psi = lambda X, Y: np.stack([eta(X, Y), 0.0 * np.asarray(X)])
        dpsi = lambda X, Y: np.stack([geta(X, Y), 0.0 * geta(X, Y)], axis=0).swapaxes(0, 1)
        out = identity_residuals(halfplane_257, (0.0, 0.0), 0.4, psi=psi, dpsi=dpsi)
        assert out["energy"]["residual"] <= 0.05
        assert out["pohozaev"]["residual"] <= 0.05
        assert out["domain_variation"]["residual"] <= 0.05

    def test_zero_field_zero_residuals(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        f = field_from_function(g, lambda X, Y: np.maximum(X - 0.8, 0.0))
        u = vector_field(g, [f.values], admissible=True)
        sol = build_solution(u, constant_weight(g, 1.0))
        out = identity_residuals(sol, (-0.3, 0.0), 0.3)
        assert out["energy"]["residual"] == 0.0
        assert out["pohozaev"]["residual"] == 0.0

    def test_zero_test_field(self, halfplane_257):
        zero = lambda X, Y: np.stack([0.0 * np.asarray(X), 0.0 * np.asarray(X)])
        dzero = lambda X, Y: np.zeros((2, 2) + np.asarray(X).shape)
        out = identity_residuals(halfplane_257, (0.0, 0.0), 0.4, psi=zero, dpsi=dzero)
        assert out["domain_variation"]["residual"] == 0.0

    def test_first_order_convergence(self):
        vals = {}
        for n in (129, 257):
            sol = halfplane_solution(n=n)
            out = identity_residuals(sol, (0.0, 0.0), 0.4)
            vals[n] = out["energy"]["residual"]
        if vals[129] > 1e-12:
            assert vals[129] / max(vals[257], 1e-300) >= 1.5


class TestMeasure:
    def _bump_at(self, cx, cy, rad):
        def eta(X, Y):
            s2 = ((np.asarray(X) - cx) ** 2 + (np.asarray(Y) - cy) ** 2) / rad**2
            out = np.zeros_like(np.asarray(s2, dtype=float))
            inside = s2 < 1
            out[inside] = np.exp(1 - 1 / (1 - s2[inside]))
            return out

        def geta(X, Y):
            s2 = ((np.asarray(X) - cx) ** 2 + (np.asarray(Y) - cy) ** 2) / rad**2
            val = np.zeros_like(np.asarray(s2, dtype=float))
            inside = s2 < 1
            val[inside] = np.exp(1 - 1 / (1 - s2[inside])) * (-1 / (1 - s2[inside]) ** 2)
            return np.stack(
                [val * 2 * (np.asarray(X) - cx) / rad**2, val * 2 * (np.asarray(Y) - cy) / rad**2]
            )

        return eta, geta

    def test_across_interface(self, halfplane_257):
        eta, geta = self._bump_at(0.0, 0.0, 0.45)
        res = measure_residual(halfplane_257, eta, geta)
        assert res <= 0.05

    def test_inside_positivity(self, halfplane_257):
        eta, geta = self._bump_at(0.55, 0.0, 0.3)
        # harmonic region: both sides are O(h); the normalization is the
        # interface integral of Q|phi| which vanishes here, so compare raw
        from fbmin.diagnostics import extract_free_boundary

        res = measure_residual(halfplane_257, eta, geta)
        assert res <= 0.05 or res == pytest.approx(0.0, abs=1e-8)

    def test_inside_zero_set(self, halfplane_257):
        eta, geta = self._bump_at(-0.55, 0.0, 0.3)
        res = measure_residual(halfplane_257, eta, geta)
        assert res == pytest.approx(0.0, abs=1e-12)

    def test_convergence(self):
        vals = {}
        for n in (129, 257):
            sol = halfplane_solution(n=n)
            eta, geta = self._bump_at(0.0, 0.0, 0.45)
            vals[n] = measure_residual(sol, eta, geta)
        assert vals[129] / max(vals[257], 1e-300) >= 1.5


class TestNta:
    def test_halfplane(self, halfplane_257):
        sol = halfplane_257
        h = sol.grid.h
        fb = extract_free_boundary(sol.mask)
        x = fb.points[fb.nearest((h / 2, 0.0))]
        rep = nta_check(sol.mask, x, [16 * h, 0.25], m_param=3.0)
        assert all(rep["corkscrew_pass"])
        for dens in rep["density"]:
            assert abs(dens - 0.5) <= 0.05
        assert all(rep["density_pass"])

    def test_full_mask(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        mask = Mask(g, np.ones(g.shape, dtype=bool))
        rep = nta_check(mask, (0.0, 0.0), [0.25], m_param=3.0)
        assert all(rep["corkscrew_pass"])  # trivially deep inside
        assert not any(rep["density_pass"])  # no complement at all
