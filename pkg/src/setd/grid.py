"""Uniform rectangular grids on [0, Lx] x [0, Ly] with discrete L2 norms.

Fields live on grid nodes (node-centered layout, spacing Lx/(nx-1)) or on
cell centers (cell-centered layout, spacing Lx/nx) and are stored as flat
vectors of length nx*ny with linear index k = i*ny + j, i along x, j along y,
so ``field.reshape(nx, ny)[i, j]`` is the value at point (i, j).

The discrete L2 inner product uses trapezoid-consistent quadrature weights in
the node-centered layout (half weight per boundary-touching axis) and uniform
dx*dy weights in the cell-centered layout; in both cases the constant-1 field
has squared norm exactly Lx*Ly.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Layout(Enum):
    NODE_CENTERED = "node"
    CELL_CENTERED = "cell"


class BCKind(Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class EdgeBC:
    """Boundary condition tag for one edge of the rectangle."""

    kind: BCKind
    value: float = 0.0

    @staticmethod
    def neumann() -> "EdgeBC":
        return EdgeBC(BCKind.NEUMANN)

    @staticmethod
    def dirichlet(value: float = 0.0) -> "EdgeBC":
        return EdgeBC(BCKind.DIRICHLET, value)


@dataclass(frozen=True)
class Boundary:
    """Per-edge boundary tags (left/right = x faces, bottom/top = y faces)."""

    left: EdgeBC = field(default_factory=EdgeBC.neumann)
    right: EdgeBC = field(default_factory=EdgeBC.neumann)
    bottom: EdgeBC = field(default_factory=EdgeBC.neumann)
    top: EdgeBC = field(default_factory=EdgeBC.neumann)

    @staticmethod
    def all_neumann() -> "Boundary":
        return Boundary()

    @property
    def has_dirichlet(self) -> bool:
        return any(
            e.kind is BCKind.DIRICHLET
            for e in (self.left, self.right, self.bottom, self.top)
        )


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid with node/cell indexing and quadrature weights."""

    nx: int
    ny: int
    Lx: float
    Ly: float
    layout: Layout
    boundary: Boundary

    @property
    def dx(self) -> float:
        if self.layout is Layout.NODE_CENTERED:
            return self.Lx / (self.nx - 1)
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        if self.layout is Layout.NODE_CENTERED:
            return self.Ly / (self.ny - 1)
        return self.Ly / self.ny

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def to_linear(self, i: int, j: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError(f"grid index ({i}, {j}) out of range")
        return i * self.ny + j

    def from_linear(self, k: int) -> tuple[int, int]:
        if not (0 <= k < self.size):
            raise IndexError(f"linear index {k} out of range")
        return divmod(k, self.ny)

    def x_coords(self) -> np.ndarray:
        """Evaluation points along x (nodes or cell centers)."""
        if self.layout is Layout.NODE_CENTERED:
            return np.linspace(0.0, self.Lx, self.nx)
        return (np.arange(self.nx) + 0.5) * self.dx

    def y_coords(self) -> np.ndarray:
        if self.layout is Layout.NODE_CENTERED:
            return np.linspace(0.0, self.Ly, self.ny)
        return (np.arange(self.ny) + 0.5) * self.dy

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_coords(), self.y_coords(), indexing="ij")

    def axis_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis quadrature weights; the 2-d weight is their outer product."""
        wx = np.full(self.nx, self.dx)
        wy = np.full(self.ny, self.dy)
        if self.layout is Layout.NODE_CENTERED:
            wx[0] *= 0.5
            wx[-1] *= 0.5
            wy[0] *= 0.5
            wy[-1] *= 0.5
        return wx, wy

    def weights(self) -> np.ndarray:
        """Flat quadrature weight vector, length nx*ny."""
        wx, wy = self.axis_weights()
        return np.outer(wx, wy).ravel()


def build_grid(
    nx: int,
    ny: int,
    Lx: float,
    Ly: float,
    layout: Layout = Layout.NODE_CENTERED,
    boundary: Boundary | None = None,
) -> Grid:
    """Construct a uniform rectangular grid.

    Parameters
    ----------
    nx, ny : int
        Node counts (node-centered) or cell counts (cell-centered), >= 2.
    Lx, Ly : float
        Domain side lengths, > 0.
    layout : Layout
        Node-centered (lumped finite elements) or cell-centered (finite
        volumes); both reduce to the same 5-point stencil on this grid.
    boundary : Boundary, optional
        Per-edge tags; defaults to homogeneous Neumann everywhere.
    """
    if nx < 2 or ny < 2:
        raise ValueError(f"need nx, ny >= 2, got ({nx}, {ny})")
    if Lx <= 0 or Ly <= 0:
        raise ValueError(f"need positive domain lengths, got ({Lx}, {Ly})")
    return Grid(int(nx), int(ny), float(Lx), float(Ly),
                layout, boundary or Boundary.all_neumann())


def l2_norm(grid: Grid, field: np.ndarray) -> float:
    """Discrete L2(Omega) norm sqrt(sum_k w_k field_k^2)."""
    field = np.asarray(field, dtype=float).ravel()
    if field.size != grid.size:
        raise ValueError(f"field length {field.size} != grid size {grid.size}")
    return float(np.sqrt(np.dot(grid.weights(), field * field)))


def l2_inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    """Discrete L2(Omega) inner product with the grid's quadrature weights."""
    f = np.asarray(f, dtype=float).ravel()
    g = np.asarray(g, dtype=float).ravel()
    if f.size != grid.size or g.size != grid.size:
        raise ValueError("field length mismatch")
    return float(np.dot(grid.weights(), f * g))
