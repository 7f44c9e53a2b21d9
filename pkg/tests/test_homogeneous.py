import numpy as np
import pytest

from conftest import build_solution

from fbmin.diagnostics import fb_condition_residual, flatness, extract_free_boundary, scaling_report, weiss_curve
from fbmin.grid import constant_weight, make_grid
from fbmin.homogeneous import (
    HalfPlaneSpec,
    arc_first_eigenvalue,
    classify_homogeneous_2d,
    halfplane_field,
)


class TestHalfPlaneField:
    def test_formula(self):
        g = make_grid(((-1, 1), (-1, 1)), (129, 129))
        u = halfplane_field(HalfPlaneSpec(1.0, (1.0, 0.0), (1.0,)), g)
        xs = g.xs()
        i = int(np.argmin(np.abs(xs - 0.5)))
        assert u.components[0].values[i, 40] == pytest.approx(0.5, abs=1e-12)

    def test_component_ratio(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        u = halfplane_field(HalfPlaneSpec(2.0, (1.0, 0.0), (0.6, 0.8)), g)
        pos = u.components[0].values > 0
        ratio = u.components[1].values[pos] / u.components[0].values[pos]
        assert np.allclose(ratio, 4.0 / 3.0, atol=1e-12)

    def test_energy_closed_form(self):
        from fbmin.energy import evaluate_J

        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        q = constant_weight(g, 1.0)
        u = halfplane_field(HalfPlaneSpec(1.0, (1.0, 0.0), (1.0,)), g)
        bd = evaluate_J(u, q)
        assert bd.total == pytest.approx(4.0, abs=1e-9)

    def test_single_component_decoupled(self):
        g = make_grid(((-1, 1), (-1, 1)), (33, 33))
        u = halfplane_field(HalfPlaneSpec(1.0, (0.0, 1.0), (0.0, 1.0, 0.0)), g)
        assert np.all(u.components[0].values == 0)
        assert np.all(u.components[2].values == 0)
        assert u.components[1].values.max() > 0

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            HalfPlaneSpec(0.0, (1.0, 0.0), (1.0,))
        with pytest.raises(ValueError):
            HalfPlaneSpec(1.0, (1.0, 1.0), (1.0,))
        with pytest.raises(ValueError):
            HalfPlaneSpec(1.0, (1.0, 0.0), (0.6, 0.6))

    def test_passes_halfplane_diagnostics(self):
        # shared-fixture invariant: the generated family satisfies the same
        # checks as the hand-built exact solutions
        q0, s = 1.25, np.hypot(1.0, 3.0)
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        u = halfplane_field(HalfPlaneSpec(q0, (1.0 / s, 3.0 / s), (0.8, 0.6)), g)
        sol = build_solution(u, constant_weight(g, q0))
        fb = extract_free_boundary(sol.mask)
        h = g.h
        x = fb.points[fb.nearest((0.0, 0.0))]
        rep = scaling_report(sol, x, [16 * h, 32 * h], fb=fb)
        for r, ratio in zip([16 * h, 32 * h], rep["sup_over_r"]):
            assert abs(ratio - q0) <= 3 * q0 * h / r
        res = fb_condition_residual(sol, fb=fb)
        assert res["median"] <= 1e-9
        curve = weiss_curve(sol, (0.0, 0.0), [0.1, 0.2, 0.4])
        for r, w, tol in curve.rows():
            assert abs(w - q0**2 * np.pi / 2) <= tol
        rho = 32 * h
        sigma, _ = flatness(sol, x, rho, fb=fb)
        assert sigma <= 2 * h / rho + 0.05


class TestArcEigenvalue:
    @pytest.mark.parametrize(
        "theta,expect,tol",
        [
            (np.pi, 1.0, 1e-6),
            (np.pi / 2, 4.0, 4e-6),
            (2 * np.pi - 1e-12, 0.25, 1e-6),
        ],
    )
    def test_closed_form(self, theta, expect, tol):
        assert abs(arc_first_eigenvalue(theta, 2048) - expect) <= tol

    def test_second_order_convergence(self):
        for theta in (np.pi / 4, np.pi / 2, np.pi, 3 * np.pi / 2):
            exact = (np.pi / theta) ** 2
            e_coarse = abs(arc_first_eigenvalue(theta, 128) - exact)
            e_fine = abs(arc_first_eigenvalue(theta, 256) - exact)
            assert e_coarse / max(e_fine, 1e-300) >= 3.0  # ~4 for second order

    def test_bounds(self):
        with pytest.raises(ValueError):
            arc_first_eigenvalue(0.0, 128)
        with pytest.raises(ValueError):
            arc_first_eigenvalue(np.pi, 8)


class TestClassification:
    @pytest.fixture(scope="class")
    def record(self):
        return classify_homogeneous_2d()

    def test_root_is_half_circle(self, record):
        assert record["theta_error"] <= 1e-6

    def test_eigenvalue_at_pi(self, record):
        assert abs(record["eigenvalue_at_pi"] - 1.0) <= 1e-6

    def test_monotone_certificate(self, record):
        assert record["monotone_decreasing"] is True
        lam = record["sweep_eigenvalues"]
        assert all(b < a for a, b in zip(lam, lam[1:]))

    def test_ground_state_positive_sine(self, record):
        assert record["ground_state_positive"] is True
        assert record["ground_state_vs_sine"] <= 1e-4

    def test_punctured_ball_excluded(self, record):
        assert record["punctured_ball_excluded"] is True
        assert abs(record["full_circle_eigenvalue"] - 0.25) <= 1e-5
