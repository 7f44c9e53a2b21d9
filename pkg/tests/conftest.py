import numpy as np
import pytest

from fbmin.energy import evaluate_J
from fbmin.grid import BoundaryData, constant_weight, make_grid, positivity_mask
from fbmin.homogeneous import HalfPlaneSpec, halfplane_field
from fbmin.solver import Solution


def build_solution(u, q, scale=None):
    """Wrap an exact field as a Solution (boundary data = its own ring)."""
    if scale is None:
        scale = float(u.magnitude().max())
    g = BoundaryData(u.grid, u.stacked())
    mask = positivity_mask(u, scale)
    return Solution(u, mask, evaluate_J(u, q, mask=mask), [], q, g, scale)


def halfplane_solution(q0=1.0, nu=(1.0, 0.0), e=(1.0,), n=257, offset=0.0, box=2.0):
    """Exact half-plane minimizer u_i = e_i q0 ((x.nu) - offset)^+ on [-box/2, box/2]^2."""
    grid = make_grid(((-box / 2, box / 2), (-box / 2, box / 2)), (n, n))
    u = halfplane_field(HalfPlaneSpec(q0, nu, e), grid, offset=offset)
    q = constant_weight(grid, q0)
    return build_solution(u, q)


@pytest.fixture(scope="session")
def halfplane_257():
    return halfplane_solution(n=257)


@pytest.fixture(scope="session")
def halfplane_tilted():
    s = np.hypot(3.0, 4.0)
    return halfplane_solution(q0=1.5, nu=(3.0 / s, 4.0 / s), e=(0.6, 0.8), n=257)
