"""Discrete spatial operators on the rectangle: diffusion, advection, Darcy.

Every operator is stored as five per-point coefficient arrays of shape
(nx, ny) -- center, west, east, south, north -- so application is a handful
of shifted array additions, row data for Gershgorin bounds is immediate, and
sparse assembly (needed by the implicit schemes and the Darcy solve) is a
diagonal stack.

Diffusion uses the 5-point stencil.  Zero-flux (Neumann) boundaries enter by
mirror ghosts; Dirichlet edges keep the homogeneous part of the half-cell
flux in the operator (making it strictly negative definite) and collect the
boundary value's coefficient in a separate source vector.  Dirichlet tags are
supported on the cell-centered layout, where boundary faces sit half a cell
away from the unknowns.

Advection is first-order upwind flux differencing of -div(q u) for a face
velocity field q, e.g. the Darcy flux of a heterogeneous permeability field.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .grid import BCKind, Boundary, Grid, Layout

__all__ = [
    "OperatorHandle",
    "VelocityField",
    "BoundaryVector",
    "assemble_diffusion",
    "upwind_advection",
    "darcy_solve",
    "permeability_streaks",
    "load_permeability_csv",
    "darcy_velocity_max",
    "peclet_number",
]


class OperatorHandle:
    """Matrix-free 5-point operator with row access for spectral bounds."""

    def __init__(self, grid: Grid, center, west, east, south, north,
                 symmetric: bool):
        self.grid = grid
        shape = (grid.nx, grid.ny)
        for name, arr in (("center", center), ("west", west), ("east", east),
                          ("south", south), ("north", north)):
            if arr.shape != shape:
                raise ValueError(f"{name} coefficient shape {arr.shape} != {shape}")
        self.center = center
        self.west = west
        self.east = east
        self.south = south
        self.north = north
        self.symmetric = symmetric

    @property
    def n(self) -> int:
        return self.grid.size

    def apply(self, v: np.ndarray) -> np.ndarray:
        u = np.asarray(v, dtype=float).reshape(self.grid.nx, self.grid.ny)
        out = self.center * u
        out[1:, :] += self.west[1:, :] * u[:-1, :]
        out[:-1, :] += self.east[:-1, :] * u[1:, :]
        out[:, 1:] += self.south[:, 1:] * u[:, :-1]
        out[:, :-1] += self.north[:, :-1] * u[:, 1:]
        return out.ravel()

    def diagonal(self) -> np.ndarray:
        return self.center.ravel().copy()

    def offdiag_abs_row_sums(self) -> np.ndarray:
        s = np.zeros_like(self.center)
        s[1:, :] += np.abs(self.west[1:, :])
        s[:-1, :] += np.abs(self.east[:-1, :])
        s[:, 1:] += np.abs(self.south[:, 1:])
        s[:, :-1] += np.abs(self.north[:, :-1])
        return s.ravel()

    def as_sparse(self) -> sparse.csr_matrix:
        ny = self.grid.ny
        diags = [
            (self.center.ravel(), 0),
            (self.west.ravel()[ny:], -ny),
            (self.east.ravel()[:-ny], ny),
            (self.south.ravel()[1:], -1),
            (self.north.ravel()[:-1], 1),
        ]
        return sparse.diags([d for d, _ in diags], [o for _, o in diags],
                            shape=(self.n, self.n), format="csr")

    def to_dense(self) -> np.ndarray:
        return self.as_sparse().toarray()

    def __add__(self, other: "OperatorHandle") -> "OperatorHandle":
        if other.grid is not self.grid and other.grid != self.grid:
            raise ValueError("operators live on different grids")
        return OperatorHandle(
            self.grid,
            self.center + other.center,
            self.west + other.west,
            self.east + other.east,
            self.south + other.south,
            self.north + other.north,
            symmetric=self.symmetric and other.symmetric
            and _coeffs_symmetric(self, other))


def _coeffs_symmetric(a, b) -> bool:
    # conservative: sums of two symmetric stencils stay symmetric only if
    # their coupling coefficients still match across each face
    w = a.west + b.west
    e = a.east + b.east
    s = a.south + b.south
    n = a.north + b.north
    return (np.allclose(w[1:, :], e[:-1, :]) and np.allclose(s[:, 1:], n[:, :-1]))


@dataclass
class BoundaryVector:
    """Source contributions from inhomogeneous Dirichlet faces."""

    values: np.ndarray

    def __add__(self, other: "BoundaryVector") -> "BoundaryVector":
        return BoundaryVector(self.values + other.values)


@dataclass
class VelocityField:
    """Face-normal velocities: qx on x-faces (nx+1, ny), qy on y-faces (nx, ny+1)."""

    qx: np.ndarray
    qy: np.ndarray

    def max_speed(self) -> float:
        return float(max(np.abs(self.qx).max(), np.abs(self.qy).max()))

    def cell_divergence(self, grid: Grid) -> np.ndarray:
        """Discrete divergence per cell, shape (nx, ny)."""
        return ((self.qx[1:, :] - self.qx[:-1, :]) / grid.dx
                + (self.qy[:, 1:] - self.qy[:, :-1]) / grid.dy)

    def cell_centered(self) -> tuple[np.ndarray, np.ndarray]:
        """Average face values to cell centers (for reporting/plots)."""
        return (0.5 * (self.qx[:-1, :] + self.qx[1:, :]),
                0.5 * (self.qy[:, :-1] + self.qy[:, 1:]))


def assemble_diffusion(grid: Grid, D: float,
                       boundary: Boundary | None = None
                       ) -> tuple[OperatorHandle, BoundaryVector]:
    """5-point discretization of D*Laplacian with the grid's boundary tags.

    Returns the operator and the Dirichlet source vector (zero for pure
    Neumann).  Pure-Neumann operators have zero row sums and are self-adjoint
    in the grid's discrete L2 inner product.
    """
    if D <= 0:
        raise ValueError("diffusivity must be positive")
    boundary = boundary or grid.boundary
    nx, ny = grid.nx, grid.ny
    cx = D / grid.dx ** 2
    cy = D / grid.dy ** 2

    west = np.full((nx, ny), cx)
    east = np.full((nx, ny), cx)
    south = np.full((nx, ny), cy)
    north = np.full((nx, ny), cy)
    west[0, :] = 0.0
    east[-1, :] = 0.0
    south[:, 0] = 0.0
    north[:, -1] = 0.0
    b = np.zeros((nx, ny))

    if grid.layout is Layout.NODE_CENTERED:
        if boundary.has_dirichlet:
            raise NotImplementedError(
                "Dirichlet tags are supported on the cell-centered layout")
        # mirror ghosts double the inward coefficient at boundary nodes
        east[0, :] = 2.0 * cx
        west[-1, :] = 2.0 * cx
        north[:, 0] = 2.0 * cy
        south[:, -1] = 2.0 * cy
        center = -(west + east + south + north)
        return OperatorHandle(grid, center, west, east, south, north,
                              symmetric=True), BoundaryVector(b.ravel())

    # cell-centered: Neumann faces drop the flux, Dirichlet faces see the
    # wall value across half a cell
    center = -(west + east + south + north)
    for edge, axis_slice, coeff in (
        (boundary.left, (0, slice(None)), 2.0 * cx),
        (boundary.right, (-1, slice(None)), 2.0 * cx),
        (boundary.bottom, (slice(None), 0), 2.0 * cy),
        (boundary.top, (slice(None), -1), 2.0 * cy),
    ):
        if edge.kind is BCKind.DIRICHLET:
            center[axis_slice] -= coeff
            b[axis_slice] += coeff * edge.value
    return OperatorHandle(grid, center, west, east, south, north,
                          symmetric=True), BoundaryVector(b.ravel())


def upwind_advection(grid: Grid, vel: VelocityField,
                     boundary: Boundary | None = None,
                     inflow_value: float = 0.0
                     ) -> tuple[OperatorHandle, BoundaryVector]:
    """First-order upwind discretization of -div(q u) on cell centers.

    Boundary faces with inflow take the upstream value from the boundary
    data (Dirichlet edges; contribution returned in the source vector),
    outflow faces extrapolate the interior cell.
    """
    if grid.layout is not Layout.CELL_CENTERED:
        raise NotImplementedError("upwind advection assumes the cell-centered layout")
    nx, ny = grid.nx, grid.ny
    if vel.qx.shape != (nx + 1, ny) or vel.qy.shape != (nx, ny + 1):
        raise ValueError("velocity faces are not dimensioned to the grid")
    boundary = boundary or grid.boundary
    dx, dy = grid.dx, grid.dy

    qxp = np.maximum(vel.qx, 0.0)
    qxm = np.minimum(vel.qx, 0.0)
    qyp = np.maximum(vel.qy, 0.0)
    qym = np.minimum(vel.qy, 0.0)

    center = np.zeros((nx, ny))
    west = np.zeros((nx, ny))
    east = np.zeros((nx, ny))
    south = np.zeros((nx, ny))
    north = np.zeros((nx, ny))
    b = np.zeros((nx, ny))

    # east/west faces: flux F = qx+ * u_left + qx- * u_right
    center -= (qxp[1:, :] - qxm[:-1, :]) / dx
    east[:, :] = -qxm[1:, :] / dx
    west[:, :] = qxp[:-1, :] / dx
    # interior-only couplings; boundary-face upstream values:
    west[0, :] = 0.0
    east[-1, :] = 0.0
    if boundary.left.kind is BCKind.DIRICHLET:
        b[0, :] += qxp[0, :] / dx * inflow_value
    if boundary.right.kind is BCKind.DIRICHLET:
        b[-1, :] += -qxm[-1, :] / dx * inflow_value

    center -= (qyp[:, 1:] - qym[:, :-1]) / dy
    north[:, :] = -qym[:, 1:] / dy
    south[:, :] = qyp[:, :-1] / dy
    south[:, 0] = 0.0
    north[:, -1] = 0.0
    if boundary.bottom.kind is BCKind.DIRICHLET:
        b[:, 0] += qyp[:, 0] / dy * inflow_value
    if boundary.top.kind is BCKind.DIRICHLET:
        b[:, -1] += -qym[:, -1] / dy * inflow_value

    return OperatorHandle(grid, center, west, east, south, north,
                          symmetric=False), BoundaryVector(b.ravel())


def permeability_streaks(grid: Grid, background: float, streak: float,
                         streak_rows: list[tuple[float, float]] | None = None
                         ) -> np.ndarray:
    """Piecewise-constant permeability with horizontal high-k bands.

    ``streak_rows`` are (y_lo, y_hi) fractions of Ly; the defaults place
    three parallel streaks across the domain.
    """
    if background <= 0 or streak < background:
        raise ValueError("need streak >= background > 0")
    if streak_rows is None:
        streak_rows = [(0.20, 0.25), (0.475, 0.525), (0.75, 0.80)]
    lo = np.array([a for a, _ in streak_rows])
    hi = np.array([b for _, b in streak_rows])
    if np.any(lo >= hi) or np.any(lo < 0) or np.any(hi > 1):
        raise ValueError("streak bands must be disjoint subranges of [0, 1]")
    order = np.argsort(lo)
    if np.any(hi[order][:-1] > lo[order][1:]):
        raise ValueError("streak bands overlap")
    y = grid.y_coords() / grid.Ly
    k = np.full((grid.nx, grid.ny), float(background))
    for a, b in streak_rows:
        k[:, (y >= a) & (y <= b)] = float(streak)
    return k


def load_permeability_csv(path, grid: Grid) -> np.ndarray:
    """Read a permeability raster (rows = y-index, comma-separated values)."""
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    if raw.shape != (grid.ny, grid.nx):
        raise ValueError(
            f"permeability raster {raw.shape} does not match grid "
            f"(ny, nx) = ({grid.ny}, {grid.nx})")
    k = raw.T.astype(float)
    if np.any(k <= 0):
        raise ValueError("permeability must be positive everywhere")
    return k


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def darcy_solve(grid: Grid, permeability: np.ndarray, mu: float = 1.0,
                p_left: float = 1.0, p_right: float = 0.0) -> VelocityField:
    """Incompressible pressure solve div[(k/mu) grad p] = 0, then face fluxes.

    Dirichlet pressures on the left/right edges, no-flow top and bottom;
    permeability is averaged harmonically at interior faces.  The returned
    flux field is discretely divergence-free to direct-solver accuracy.
    """
    if grid.layout is not Layout.CELL_CENTERED:
        raise NotImplementedError("Darcy solve uses the cell-centered layout")
    k = np.asarray(permeability, dtype=float)
    if k.shape != (grid.nx, grid.ny):
        raise ValueError("permeability shape mismatch")
    if np.any(k <= 0):
        raise ValueError("permeability must be positive")
    if mu <= 0:
        raise ValueError("viscosity must be positive")
    nx, ny = grid.nx, grid.ny
    dx, dy = grid.dx, grid.dy

    # face coefficients: q_face = t * (p_upstream - p_downstream), velocity units
    tx = np.zeros((nx + 1, ny))
    tx[1:-1, :] = _harmonic(k[:-1, :], k[1:, :]) / (mu * dx)
    tx[0, :] = k[0, :] / (mu * dx / 2.0)
    tx[-1, :] = k[-1, :] / (mu * dx / 2.0)
    ty = np.zeros((nx, ny + 1))
    ty[:, 1:-1] = _harmonic(k[:, :-1], k[:, 1:]) / (mu * dy)
    # top/bottom faces stay zero: no-flow

    center = -(tx[:-1, :] + tx[1:, :]) / dx - (ty[:, :-1] + ty[:, 1:]) / dy
    west = tx[:-1, :] / dx
    east = tx[1:, :] / dx
    west[0, :] = 0.0
    east[-1, :] = 0.0
    south = ty[:, :-1] / dy
    north = ty[:, 1:] / dy
    south[:, 0] = 0.0
    north[:, -1] = 0.0

    rhs = np.zeros((nx, ny))
    rhs[0, :] = -tx[0, :] / dx * p_left
    rhs[-1, :] = -tx[-1, :] / dx * p_right

    op = OperatorHandle(grid, center, west, east, south, north, symmetric=True)
    lu = splu(op.as_sparse().tocsc())
    p = lu.solve(rhs.ravel()).reshape(nx, ny)

    qx = np.zeros((nx + 1, ny))
    qx[1:-1, :] = tx[1:-1, :] * (p[:-1, :] - p[1:, :])
    qx[0, :] = tx[0, :] * (p_left - p[0, :])
    qx[-1, :] = tx[-1, :] * (p[-1, :] - p_right)
    qy = np.zeros((nx, ny + 1))
    qy[:, 1:-1] = ty[:, 1:-1] * (p[:, :-1] - p[:, 1:])
    return VelocityField(qx=qx, qy=qy)


def darcy_velocity_max(vel: VelocityField) -> float:
    return vel.max_speed()


def peclet_number(vel: VelocityField, L: float, D: float) -> float:
    """Advection-to-diffusion ratio ||q||_max * L / D."""
    return vel.max_speed() * L / D
