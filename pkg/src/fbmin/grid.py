"""Uniform node-centered grids on rectangular boxes and the field types living on them.

Everything downstream (energy, solver, diagnostics) works with these types:
scalar/vector fields sampled at grid nodes, boolean positivity masks, and the
weight field Q.  The module also provides the quadrature primitives shared by
all modules: bilinear interpolation, per-cell averaged gradients, sphere
averages and disk integrals with cut-cell weighting.

Conventions
-----------
* values are stored as arrays of shape (nx, ny); index i runs along the first
  axis of the box, j along the second.  Row-major (C) flattening is the
  serialization order.
* the grid is node-centered: nodes include the box corners exactly, spacing
  h = (b - a) / (n - 1) per axis.
* a node counts as positive when the Euclidean length of the field value
  exceeds ``positivity_tol``: 1e-10 * max(1, data scale).  A cell counts as
  positive when any of its four corner nodes is positive.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

POSITIVITY_RTOL = 1e-10

# 4x4 midpoint subsample offsets used for cut-cell overlap areas.
_SUB = (np.arange(4) + 0.5) / 4.0
_SUBX, _SUBY = np.meshgrid(_SUB, _SUB, indexing="ij")
_SUBX = _SUBX.ravel()
_SUBY = _SUBY.ravel()


def positivity_tol(scale: float) -> float:
    """Threshold below which a node value counts as zero.

    ``scale`` is the natural data scale (max boundary datum for solver
    output); the floor max(1, scale) keeps the tolerance meaningful for
    small data without classifying round-off as positivity.
    """
    return POSITIVITY_RTOL * max(1.0, float(scale))


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box [ax,bx] x [ay,by] sampled by nx x ny nodes."""

    ax: float
    bx: float
    ay: float
    by: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.bx > self.ax and self.by > self.ay):
            raise ValueError(f"degenerate box [{self.ax},{self.bx}]x[{self.ay},{self.by}]")
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"need at least 3 nodes per axis, got ({self.nx},{self.ny})")

    @property
    def hx(self) -> float:
        return (self.bx - self.ax) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.by - self.ay) / (self.ny - 1)

    @property
    def h(self) -> float:
        """Coarsest spacing; the resolution scale used in tolerances."""
        return max(self.hx, self.hy)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def xs(self) -> np.ndarray:
        return np.linspace(self.ax, self.bx, self.nx)

    def ys(self) -> np.ndarray:
        return np.linspace(self.ay, self.by, self.ny)

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.xs()[i], self.ys()[j])

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs(), self.ys(), indexing="ij")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.xs()
        y = self.ys()
        cx = 0.5 * (x[:-1] + x[1:])
        cy = 0.5 * (y[:-1] + y[1:])
        return np.meshgrid(cx, cy, indexing="ij")

    def contains(self, x: float, y: float, tol: float = 1e-12) -> bool:
        sx = tol * (self.bx - self.ax)
        sy = tol * (self.by - self.ay)
        return (self.ax - sx <= x <= self.bx + sx) and (self.ay - sy <= y <= self.by + sy)

    def ball_inside(self, center, radius: float, tol: float = 1e-12) -> bool:
        cx, cy = center
        pad = tol * max(self.bx - self.ax, self.by - self.ay)
        return (
            cx - radius >= self.ax - pad
            and cx + radius <= self.bx + pad
            and cy - radius >= self.ay - pad
            and cy + radius <= self.by + pad
        )


def make_grid(box, nodes_per_axis) -> GridSpec:
    """Build a GridSpec from ((ax,bx),(ay,by)) and (nx,ny)."""
    (ax, bx), (ay, by) = box
    nx, ny = nodes_per_axis
    return GridSpec(float(ax), float(bx), float(ay), float(by), int(nx), int(ny))


@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"value shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite values in ScalarField")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


def constant_field(grid: GridSpec, value: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(value)))


def field_from_function(grid: GridSpec, f) -> ScalarField:
    X, Y = grid.meshgrid()
    return ScalarField(grid, np.asarray(f(X, Y), dtype=float) + np.zeros(grid.shape))


@dataclass
class VectorField:
    """m nonnegative-constrained scalar components on one shared grid."""

    grid: GridSpec
    components: list
    admissible: bool = False

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValueError("need at least one component")
        for c in self.components:
            if c.grid != self.grid:
                raise ValueError("all components must share one GridSpec")
        if self.admissible:
            for c in self.components:
                if c.values.min() < 0.0:
                    raise ValueError("admissible VectorField has a negative value")

    @property
    def m(self) -> int:
        return len(self.components)

    def stacked(self) -> np.ndarray:
        """(m, nx, ny) view of the component values."""
        return np.stack([c.values for c in self.components])

    def magnitude(self) -> np.ndarray:
        """Euclidean length |u| per node, shape (nx, ny)."""
        return np.sqrt(np.sum(self.stacked() ** 2, axis=0))

    def copy(self) -> "VectorField":
        return VectorField(self.grid, [c.copy() for c in self.components], self.admissible)


def vector_field(grid: GridSpec, arrays, admissible: bool = False) -> VectorField:
    return VectorField(grid, [ScalarField(grid, a) for a in arrays], admissible)


@dataclass
class Mask:
    grid: GridSpec
    flags: np.ndarray

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.shape != self.grid.shape:
            raise ValueError(f"mask shape {self.flags.shape} != grid shape {self.grid.shape}")

    def cell_flags(self) -> np.ndarray:
        """Cell positive iff any of its 4 corner nodes is positive; shape (nx-1, ny-1)."""
        f = self.flags
        return f[:-1, :-1] | f[1:, :-1] | f[:-1, 1:] | f[1:, 1:]

    def count(self) -> int:
        return int(self.flags.sum())


def positivity_mask(u: VectorField, scale: float | None = None) -> Mask:
    """Node positivity of |u| at the scale-aware threshold."""
    if scale is None:
        scale = float(u.magnitude().max(initial=0.0))
    return Mask(u.grid, u.magnitude() > positivity_tol(scale))


@dataclass
class WeightField:
    """Coefficient Q with recorded bounds 0 < q_min <= Q <= q_max."""

    grid: GridSpec
    values: np.ndarray
    q_min: float = field(default=None)  # type: ignore[assignment]
    q_max: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"weight shape {self.values.shape} != grid shape {self.grid.shape}")
        vmin = float(self.values.min())
        vmax = float(self.values.max())
        if self.q_min is None:
            self.q_min = vmin
        if self.q_max is None:
            self.q_max = vmax
        if not (0.0 < self.q_min <= vmin and vmax <= self.q_max):
            raise ValueError(
                f"weight bounds violated: need 0 < q_min <= Q <= q_max, "
                f"got q_min={self.q_min}, min={vmin}, max={vmax}, q_max={self.q_max}"
            )

    def cell_values(self) -> np.ndarray:
        """Q averaged onto cells (single node-sampling convention everywhere)."""
        v = self.values
        return 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])

    def interpolate(self, x: float, y: float) -> float:
        return interpolate(ScalarField(self.grid, self.values), (x, y))


def constant_weight(grid: GridSpec, q0: float) -> WeightField:
    return WeightField(grid, np.full(grid.shape, float(q0)))


@dataclass
class BoundaryData:
    """Nonnegative Dirichlet data on the boundary ring, one array per component.

    values[k] has full grid shape; only the boundary ring is meaningful.
    """

    grid: GridSpec
    values: np.ndarray  # (m, nx, ny)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[1:] != self.grid.shape:
            raise ValueError("boundary values must have shape (m, nx, ny)")
        ring = boundary_ring(self.grid)
        if self.values[:, ring].min() < 0.0:
            raise ValueError("boundary data must be nonnegative")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def max_datum(self) -> float:
        return float(self.values[:, boundary_ring(self.grid)].max(initial=0.0))

    def apply(self, arrays: np.ndarray) -> np.ndarray:
        """Overwrite the boundary ring of (m, nx, ny) arrays with the data."""
        ring = boundary_ring(self.grid)
        out = arrays.copy()
        out[:, ring] = self.values[:, ring]
        return out


def boundary_ring(grid: GridSpec) -> np.ndarray:
    ring = np.zeros(grid.shape, dtype=bool)
    ring[0, :] = ring[-1, :] = True
    ring[:, 0] = ring[:, -1] = True
    return ring


def boundary_from_functions(grid: GridSpec, funcs) -> BoundaryData:
    """Evaluate per-component callables g_i(x, y) on the grid (only the ring is used)."""
    X, Y = grid.meshgrid()
    vals = np.stack([np.asarray(f(X, Y), dtype=float) + np.zeros(grid.shape) for f in funcs])
    return BoundaryData(grid, vals)


# ---------------------------------------------------------------------------
# quadrature primitives


def interpolate(fld: ScalarField, point) -> float:
    """Bilinear value at a point inside the box; exact on per-axis-affine fields."""
    return float(interpolate_many(fld, np.asarray([point], dtype=float))[0])


def interpolate_many(fld: ScalarField, points: np.ndarray) -> np.ndarray:
    """Vectorized bilinear interpolation; points has shape (k, 2)."""
    g = fld.grid
    pts = np.asarray(points, dtype=float)
    x = pts[:, 0]
    y = pts[:, 1]
    sx = 1e-12 * (g.bx - g.ax)
    sy = 1e-12 * (g.by - g.ay)
    if np.any(x < g.ax - sx) or np.any(x > g.bx + sx) or np.any(y < g.ay - sy) or np.any(y > g.by + sy):
        raise ValueError("interpolation point outside the domain box")
    tx = np.clip((x - g.ax) / g.hx, 0.0, g.nx - 1)
    ty = np.clip((y - g.ay) / g.hy, 0.0, g.ny - 1)
    i = np.minimum(tx.astype(int), g.nx - 2)
    j = np.minimum(ty.astype(int), g.ny - 2)
    fx = tx - i
    fy = ty - j
    v = fld.values
    return (
        v[i, j] * (1 - fx) * (1 - fy)
        + v[i + 1, j] * fx * (1 - fy)
        + v[i, j + 1] * (1 - fx) * fy
        + v[i + 1, j + 1] * fx * fy
    )


def cell_gradients(values: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell forward-difference gradient, averaged over the two node pairs per axis.

    Returns (gx, gy) arrays of shape (nx-1, ny-1).  Exact on affine fields;
    this is the quadrature that makes the Dirichlet energy a quadratic form
    with exact linear reproduction.
    """
    gx = (values[1:, :-1] - values[:-1, :-1] + values[1:, 1:] - values[:-1, 1:]) / (2 * grid.hx)
    gy = (values[:-1, 1:] - values[:-1, :-1] + values[1:, 1:] - values[1:, :-1]) / (2 * grid.hy)
    return gx, gy


def cell_gradient(fld: ScalarField, cell) -> tuple[float, float]:
    """Gradient on one cell (i, j); cells are indexed by their lower-left node."""
    i, j = cell
    g = fld.grid
    if not (0 <= i < g.nx - 1 and 0 <= j < g.ny - 1):
        raise ValueError(f"cell {(i, j)} out of range for {g.nx - 1}x{g.ny - 1} cells")
    gx, gy = cell_gradients(fld.values, g)
    return (float(gx[i, j]), float(gy[i, j]))


def sphere_average(fld: ScalarField, center, radius: float, n_samples: int = 256) -> float:
    """Mean of interpolated values at n_samples equally spaced angles on the circle."""
    if n_samples < 8:
        raise ValueError("need at least 8 angular samples")
    g = fld.grid
    if radius <= 0 or not g.ball_inside(center, radius):
        raise ValueError("circle exits the domain")
    theta = 2 * np.pi * np.arange(n_samples) / n_samples
    pts = np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])
    return float(interpolate_many(fld, pts).mean())


def cell_ball_overlap(grid: GridSpec, center, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Fractional cell-in-disk overlap for cells meeting B_radius(center).

    Returns (cell_index_pairs, fractions): fully inside cells get 1, cut
    cells the 16-point subsample fraction.  Only cells with positive overlap
    are listed.
    """
    cx, cy = center
    x = grid.xs()
    y = grid.ys()
    i0 = max(0, int(np.floor((cx - radius - grid.ax) / grid.hx)))
    i1 = min(grid.nx - 2, int(np.ceil((cx + radius - grid.ax) / grid.hx)))
    j0 = max(0, int(np.floor((cy - radius - grid.ay) / grid.hy)))
    j1 = min(grid.ny - 2, int(np.ceil((cy + radius - grid.ay) / grid.hy)))
    if i1 < i0 or j1 < j0:
        return np.empty((2, 0), dtype=int), np.empty(0)
    ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    x0 = x[ii]
    y0 = y[jj]
    # classify by the nearest/farthest corner distance
    nearx = np.maximum(np.abs(cx - (x0 + grid.hx / 2)) - grid.hx / 2, 0.0)
    neary = np.maximum(np.abs(cy - (y0 + grid.hy / 2)) - grid.hy / 2, 0.0)
    near2 = nearx**2 + neary**2
    farx = np.abs(cx - (x0 + grid.hx / 2)) + grid.hx / 2
    fary = np.abs(cy - (y0 + grid.hy / 2)) + grid.hy / 2
    far2 = farx**2 + fary**2
    r2 = radius * radius
    frac = np.zeros(ii.shape)
    frac[far2 <= r2] = 1.0
    cut = (near2 < r2) & (far2 > r2)
    if np.any(cut):
        sx = x0[cut, None] + grid.hx * _SUBX[None, :]
        sy = y0[cut, None] + grid.hy * _SUBY[None, :]
        inside = (sx - cx) ** 2 + (sy - cy) ** 2 < r2
        frac[cut] = inside.mean(axis=1)
    keep = frac > 0
    return np.stack([ii[keep], jj[keep]]), frac[keep]


def ball_integrate_cells(cell_values: np.ndarray, grid: GridSpec, center, radius: float) -> float:
    """Integrate a per-cell integrand over the disk with cut-cell overlap weights."""
    if radius <= 0 or not grid.ball_inside(center, radius):
        raise ValueError("ball exits the domain")
    idx, frac = cell_ball_overlap(grid, center, radius)
    if idx.shape[1] == 0:
        return 0.0
    return float(np.sum(cell_values[idx[0], idx[1]] * frac) * grid.cell_area)


def ball_integrate(fld: ScalarField, center, radius: float) -> float:
    """Disk integral of a node field: cell averages times overlap-weighted areas."""
    v = fld.values
    cell_avg = 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])
    return ball_integrate_cells(cell_avg, fld.grid, center, radius)


# ---------------------------------------------------------------------------
# serialization: CSV, flat binary (FBM1), PGM masks

_FBM_MAGIC = b"FBM1"


def write_field_csv(fld: ScalarField, path) -> None:
    g = fld.grid
    with open(path, "w", newline="\n") as fh:
        fh.write("nx,ny,ax,bx,ay,by\n")
        fh.write(f"{g.nx},{g.ny},{g.ax!r},{g.bx!r},{g.ay!r},{g.by!r}\n")
        for val in fld.values.ravel(order="C"):
            fh.write(f"{float(val)!r}\n")


def read_field_csv(path) -> ScalarField:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "nx,ny,ax,bx,ay,by":
            raise ValueError(f"bad field CSV header: {header!r}")
        parts = fh.readline().strip().split(",")
        nx, ny = int(parts[0]), int(parts[1])
        ax, bx, ay, by = (float(p) for p in parts[2:6])
        vals = np.array([float(line) for line in fh if line.strip()])
    if vals.size != nx * ny:
        raise ValueError(f"expected {nx * ny} values, got {vals.size}")
    return ScalarField(GridSpec(ax, bx, ay, by, nx, ny), vals.reshape(nx, ny))


def write_field_binary(fld: ScalarField, path) -> None:
    g = fld.grid
    with open(path, "wb") as fh:
        fh.write(_FBM_MAGIC)
        fh.write(struct.pack("<II", g.nx, g.ny))
        fh.write(struct.pack("<dddd", g.ax, g.bx, g.ay, g.by))
        fh.write(fld.values.astype("<f8").tobytes(order="C"))


def read_field_binary(path) -> ScalarField:
    with open(path, "rb") as fh:
        if fh.read(4) != _FBM_MAGIC:
            raise ValueError("not an FBM1 field file")
        nx, ny = struct.unpack("<II", fh.read(8))
        ax, bx, ay, by = struct.unpack("<dddd", fh.read(32))
        vals = np.frombuffer(fh.read(8 * nx * ny), dtype="<f8").reshape(nx, ny)
    return ScalarField(GridSpec(ax, bx, ay, by, int(nx), int(ny)), vals.copy())


def write_mask_pgm(mask: Mask, path) -> None:
    """Binary PGM: 0 = zero set, 255 = positivity set; rows top-to-bottom in y."""
    img = np.where(mask.flags, 255, 0).astype(np.uint8)
    # image rows scan y downwards, columns scan x
    img = img.T[::-1, :]
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes(order="C"))


def read_mask_pgm(path, grid: GridSpec) -> Mask:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, hgt, _maxval = fields
    img = np.frombuffer(data[pos : pos + w * hgt], dtype=np.uint8).reshape(hgt, w)
    flags = img[::-1, :].T > 127
    if flags.shape != grid.shape:
        raise ValueError(f"PGM shape {flags.shape} does not match grid {grid.shape}")
    return Mask(grid, flags.copy())
