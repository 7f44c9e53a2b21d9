import numpy as np
import pytest

from conftest import halfplane_solution

from fbmin.blowup import blowup_sequence, classify_regular, default_frame_grid, rescale
from fbmin.grid import constant_field, make_grid, vector_field
from fbmin.homogeneous import HalfPlaneSpec, halfplane_field


class TestRescale:
    def test_homogeneous_fixed_point(self):
        sol = halfplane_solution(n=257)
        target = default_frame_grid(65)
        for r in (0.1, 0.25, 0.5):
            frame = rescale(sol.u, (0.0, 0.0), r, target)
            expect = halfplane_field(HalfPlaneSpec(1.0, (1.0, 0.0), (1.0,)), target)
            err = np.abs(frame.field.stacked() - expect.stacked()).max()
            assert err <= 1e-12

    def test_composition(self):
        sol = halfplane_solution(n=257, q0=2.0, nu=(0.0, 1.0))
        target = default_frame_grid(33)
        inner = rescale(sol.u, (0.0, 0.0), 0.4, target)
        outer = rescale(inner.field, (0.0, 0.0), 0.5, target)
        direct = rescale(sol.u, (0.0, 0.0), 0.2, target)
        err = np.abs(outer.field.stacked() - direct.field.stacked()).max()
        assert err <= 2 * (inner.tolerance + direct.tolerance) + 1e-12

    def test_constant_field_scales(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        c = 0.7
        u = vector_field(g, [np.full(g.shape, c)], admissible=True)
        r = 0.25
        frame = rescale(u, (0.1, -0.2), r, default_frame_grid(17))
        assert np.allclose(frame.field.stacked(), c / r, atol=1e-12)

    def test_window_exits_domain(self):
        sol = halfplane_solution(n=65)
        with pytest.raises(ValueError):
            rescale(sol.u, (0.9, 0.0), 0.5, default_frame_grid(17))

    def test_preserves_nonnegativity(self):
        sol = halfplane_solution(n=129)
        frame = rescale(sol.u, (0.0, 0.0), 0.3, default_frame_grid(33))
        assert frame.field.stacked().min() >= 0.0


class TestBlowupSequence:
    def test_homogeneous_cauchy(self):
        sol = halfplane_solution(n=257)
        frames, dists = blowup_sequence(sol.u, (0.0, 0.0), [0.4, 0.2, 0.1])
        assert len(frames) == 3 and len(dists) == 2
        for d, f in zip(dists, frames[1:]):
            assert d <= f.tolerance + 1e-12

    def test_single_radius_rejected(self):
        sol = halfplane_solution(n=65)
        with pytest.raises(ValueError):
            blowup_sequence(sol.u, (0.0, 0.0), [0.2])

    def test_nondecreasing_radii_rejected(self):
        sol = halfplane_solution(n=65)
        with pytest.raises(ValueError):
            blowup_sequence(sol.u, (0.0, 0.0), [0.1, 0.2])


class TestClassifyRegular:
    def test_fits_own_model(self):
        target = default_frame_grid(65)
        u = halfplane_field(HalfPlaneSpec(1.0, (-1.0, 0.0), (1.0,)), target)
        frame_like = rescale(u, (0.0, 0.0), 1.0, target)
        fit = classify_regular(frame_like, 1.0)
        assert fit["residual"] <= 1e-10
        assert fit["nu"][0] == pytest.approx(-1.0, abs=1e-7)
        assert fit["e"][0] == pytest.approx(1.0, abs=1e-12)

    def test_two_component_weights(self):
        target = default_frame_grid(65)
        u = halfplane_field(HalfPlaneSpec(1.0, (1.0, 0.0), (1 / np.sqrt(2), 1 / np.sqrt(2))), target)
        frame = rescale(u, (0.0, 0.0), 1.0, target)
        fit = classify_regular(frame, 1.0)
        assert fit["residual"] <= 1e-10
        assert fit["e"][0] == pytest.approx(1 / np.sqrt(2), abs=1e-9)
        assert fit["e"][1] == pytest.approx(1 / np.sqrt(2), abs=1e-9)

    def test_tilted_direction_recovered(self):
        s = np.hypot(1.0, 2.0)
        nu = (1.0 / s, 2.0 / s)
        target = default_frame_grid(65)
        u = halfplane_field(HalfPlaneSpec(1.4, nu, (0.6, 0.8)), target)
        frame = rescale(u, (0.0, 0.0), 1.0, target)
        fit = classify_regular(frame, 1.4)
        assert fit["residual"] <= 1e-9
        assert fit["nu"][0] == pytest.approx(nu[0], abs=1e-6)
        assert fit["nu"][1] == pytest.approx(nu[1], abs=1e-6)

    def test_e_constraints(self):
        # the recovered weights are always a nonnegative unit vector
        rng = np.random.default_rng(0)
        target = default_frame_grid(33)
        X, Y = target.meshgrid()
        u = vector_field(target, [np.abs(np.sin(X) * Y), np.abs(X + Y)], admissible=True)
        frame = rescale(u, (0.0, 0.0), 0.5, default_frame_grid(33))
        fit = classify_regular(frame, 1.0)
        e = np.asarray(fit["e"])
        assert np.all(e >= 0)
        assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-12)

    def test_zero_frame_rejected(self):
        target = default_frame_grid(17)
        u = vector_field(target, [np.zeros(target.shape)])
        frame = rescale(u, (0.0, 0.0), 0.5, default_frame_grid(17))
        with pytest.raises(ValueError):
            classify_regular(frame, 1.0)
