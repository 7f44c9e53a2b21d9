import numpy as np
import pytest

from fbmin.grid import (
    GridSpec,
    Mask,
    ScalarField,
    ball_integrate,
    cell_gradient,
    cell_gradients,
    constant_field,
    field_from_function,
    interpolate,
    make_grid,
    positivity_mask,
    read_field_binary,
    read_field_csv,
    read_mask_pgm,
    sphere_average,
    vector_field,
    write_field_binary,
    write_field_csv,
    write_mask_pgm,
)


class TestMakeGrid:
    def test_symmetric_box_midpoint(self):
        g = make_grid(((-1, 1), (-1, 1)), (3, 3))
        assert g.hx == 1.0 and g.hy == 1.0
        assert g.node(1, 1) == (0.0, 0.0)

    def test_fine_spacing(self):
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        assert g.hx == pytest.approx(1 / 128, abs=0) and g.hy == pytest.approx(1 / 128, abs=0)

    def test_rectangular(self):
        g = make_grid(((0, 1), (0, 2)), (3, 5))
        assert g.hx == 0.5 and g.hy == 0.5

    def test_corners_exact(self):
        g = make_grid(((-0.3, 1.7), (0.2, 0.9)), (7, 11))
        assert g.node(0, 0) == (-0.3, 0.2)
        assert g.node(6, 10) == (1.7, 0.9)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            make_grid(((1, 1), (0, 1)), (3, 3))
        with pytest.raises(ValueError):
            make_grid(((1, 0), (0, 1)), (3, 3))

    def test_too_few_nodes_rejected(self):
        with pytest.raises(ValueError):
            make_grid(((0, 1), (0, 1)), (2, 3))


class TestInterpolate:
    def test_constant(self):
        g = make_grid(((-1, 1), (-1, 1)), (17, 17))
        f = constant_field(g, 5.0)
        assert interpolate(f, (0.123, -0.456)) == pytest.approx(5.0, abs=1e-14)

    def test_linear_reproduction(self):
        g = make_grid(((-1, 1), (-1, 1)), (17, 17))
        f = field_from_function(g, lambda X, Y: X)
        assert interpolate(f, (0.3, 0.7)) == pytest.approx(0.3, abs=1e-12)

    def test_bilinear_reproduction(self):
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        f = field_from_function(g, lambda X, Y: X * Y)
        assert interpolate(f, (0.5, 0.5)) == pytest.approx(0.25, abs=1e-12)

    def test_affine_per_axis_exact_many_points(self):
        g = make_grid(((-1, 1), (-1, 1)), (33, 33))
        f = field_from_function(g, lambda X, Y: 2 * X - 3 * Y + 4 * X * Y + 1)
        rng = np.random.default_rng(0)
        for _ in range(50):
            x, y = rng.uniform(-1, 1, 2)
            expect = 2 * x - 3 * y + 4 * x * y + 1
            assert interpolate(f, (x, y)) == pytest.approx(expect, abs=1e-12)

    def test_outside_rejected(self):
        g = make_grid(((-1, 1), (-1, 1)), (9, 9))
        f = constant_field(g, 1.0)
        with pytest.raises(ValueError):
            interpolate(f, (1.5, 0.0))


class TestCellGradient:
    def test_linear_exact(self):
        g = make_grid(((-1, 1), (-1, 1)), (9, 9))
        f = field_from_function(g, lambda X, Y: X)
        for cell in [(0, 0), (3, 4), (7, 7)]:
            gx, gy = cell_gradient(f, cell)
            assert gx == pytest.approx(1.0, abs=1e-14)
            assert gy == pytest.approx(0.0, abs=1e-14)

    def test_constant_zero(self):
        g = make_grid(((-1, 1), (-1, 1)), (9, 9))
        f = constant_field(g, 3.7)
        assert cell_gradient(f, (2, 2)) == (0.0, 0.0)

    def test_straddling_cell_half_slope(self):
        # cell with nodes at x in {-0.25, +0.25} straddling the kink of (x)^+
        g = make_grid(((-0.25, 0.75), (0, 1)), (3, 3))
        assert g.hx == 0.5
        f = field_from_function(g, lambda X, Y: np.maximum(X, 0.0))
        gx, gy = cell_gradient(f, (0, 0))
        assert gx == pytest.approx(0.5, abs=1e-14)
        assert gy == pytest.approx(0.0, abs=1e-14)

    def test_out_of_range_rejected(self):
        g = make_grid(((0, 1), (0, 1)), (4, 4))
        f = constant_field(g, 0.0)
        with pytest.raises(ValueError):
            cell_gradient(f, (3, 0))

    def test_linearity(self):
        g = make_grid(((0, 1), (0, 1)), (9, 9))
        rng = np.random.default_rng(1)
        a = rng.standard_normal(g.shape)
        b = rng.standard_normal(g.shape)
        ga = cell_gradients(a, g)
        gb = cell_gradients(b, g)
        gs = cell_gradients(a + b, g)
        assert np.allclose(gs[0], ga[0] + gb[0], atol=1e-13, rtol=1e-13)
        assert np.allclose(gs[1], ga[1] + gb[1], atol=1e-13, rtol=1e-13)


class TestSphereAverage:
    def test_constant(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        assert sphere_average(constant_field(g, 3.0), (0, 0), 0.5) == pytest.approx(3.0, abs=1e-13)

    def test_odd_function_cancels(self):
        g = make_grid(((-1, 1), (-1, 1)), (65, 65))
        f = field_from_function(g, lambda X, Y: X)
        assert sphere_average(f, (0, 0), 0.7, 256) == pytest.approx(0.0, abs=1e-13)

    def test_positive_part_closed_form(self):
        # circular mean of (r cos t)^+ is r/pi
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        f = field_from_function(g, lambda X, Y: np.maximum(X, 0.0))
        r = 0.5
        assert sphere_average(f, (0, 0), r, 4096) == pytest.approx(r / np.pi, rel=2e-4)

    def test_circle_outside_rejected(self):
        g = make_grid(((-1, 1), (-1, 1)), (17, 17))
        with pytest.raises(ValueError):
            sphere_average(constant_field(g, 1.0), (0.8, 0.0), 0.5)

    def test_too_few_samples_rejected(self):
        g = make_grid(((-1, 1), (-1, 1)), (17, 17))
        with pytest.raises(ValueError):
            sphere_average(constant_field(g, 1.0), (0, 0), 0.5, n_samples=4)


class TestBallIntegrate:
    def test_constant_disk_area(self):
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        r = 0.5
        val = ball_integrate(constant_field(g, 1.0), (0, 0), r)
        assert abs(val - np.pi * r * r) / (np.pi * r * r) <= 2 * g.h / r

    def test_zero(self):
        g = make_grid(((-1, 1), (-1, 1)), (33, 33))
        assert ball_integrate(constant_field(g, 0.0), (0, 0), 0.5) == 0.0

    def test_half_disk_indicator(self):
        g = make_grid(((-1, 1), (-1, 1)), (257, 257))
        f = field_from_function(g, lambda X, Y: (X > 0).astype(float))
        r = 0.5
        val = ball_integrate(f, (0, 0), r)
        assert abs(val - np.pi * r * r / 2) / (np.pi * r * r / 2) <= 2 * g.h / r

    def test_ball_outside_rejected(self):
        g = make_grid(((-1, 1), (-1, 1)), (17, 17))
        with pytest.raises(ValueError):
            ball_integrate(constant_field(g, 1.0), (0.9, 0.9), 0.5)


class TestMask:
    def test_positivity_scale_aware(self):
        g = make_grid(((0, 1), (0, 1)), (5, 5))
        vals = np.zeros(g.shape)
        vals[2, 2] = 1e-12  # round-off sized: must not count as positive
        vals[1, 1] = 1.0
        u = vector_field(g, [vals])
        mask = positivity_mask(u)
        assert bool(mask.flags[1, 1]) is True
        assert bool(mask.flags[2, 2]) is False

    def test_cell_flags_any_corner(self):
        g = make_grid(((0, 1), (0, 1)), (3, 3))
        flags = np.zeros(g.shape, dtype=bool)
        flags[0, 0] = True
        m = Mask(g, flags)
        cells = m.cell_flags()
        assert bool(cells[0, 0]) is True
        assert not cells[1, :].any()


class TestSerialization:
    def test_csv_roundtrip(self, tmp_path):
        g = make_grid(((-1, 1), (0, 2)), (5, 7))
        rng = np.random.default_rng(3)
        f = ScalarField(g, rng.standard_normal(g.shape))
        path = tmp_path / "f.csv"
        write_field_csv(f, path)
        back = read_field_csv(path)
        assert back.grid == g
        assert np.array_equal(back.values, f.values)

    def test_binary_roundtrip(self, tmp_path):
        g = make_grid(((-1, 1), (0, 2)), (5, 7))
        rng = np.random.default_rng(4)
        f = ScalarField(g, rng.standard_normal(g.shape))
        path = tmp_path / "f.fbm"
        write_field_binary(f, path)
        back = read_field_binary(path)
        assert back.grid == g
        assert np.array_equal(back.values, f.values)

    def test_binary_magic(self, tmp_path):
        path = tmp_path / "f.fbm"
        g = make_grid(((0, 1), (0, 1)), (3, 3))
        write_field_binary(constant_field(g, 1.0), path)
        assert path.read_bytes()[:4] == b"FBM1"

    def test_pgm_roundtrip(self, tmp_path):
        g = make_grid(((0, 1), (0, 1)), (6, 4))
        rng = np.random.default_rng(5)
        m = Mask(g, rng.uniform(size=g.shape) > 0.5)
        path = tmp_path / "m.pgm"
        write_mask_pgm(m, path)
        back = read_mask_pgm(path, g)
        assert np.array_equal(back.flags, m.flags)
        assert path.read_bytes()[:2] == b"P5"

    def test_determinism(self, tmp_path):
        g = make_grid(((0, 1), (0, 1)), (9, 9))
        f = field_from_function(g, lambda X, Y: np.sin(3 * X) + Y)
        p1, p2 = tmp_path / "a.fbm", tmp_path / "b.fbm"
        write_field_binary(f, p1)
        write_field_binary(f, p2)
        assert p1.read_bytes() == p2.read_bytes()
