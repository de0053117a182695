"""Neumann-Laplacian eigenbasis on the rectangle and cosine-transform synthesis.

On [0, L] the eigenfunctions of -d^2/dx^2 with zero-flux boundaries are
e_0 = sqrt(1/L) and e_i = sqrt(2/L) cos(i pi x / L) with eigenvalues
(i pi / L)^2.  Two-dimensional modes are tensor products e_i(x) e_j(y) with
eigenvalue lambda_{i,j} = (i pi / Lx)^2 + (j pi / Ly)^2.

Coefficient fields are N x N matrices, mode (i, j) in {0..N-1}^2.  Synthesis
onto a grid and analysis back are exact inverses of each other when the
truncation N does not exceed the grid's per-axis resolution: grid node /
cell-center sampling of the cosines is discretely orthogonal under the grid's
quadrature weights (DCT-I structure for node-centered grids, DCT-II/III for
cell-centered ones).

The module also carries the exact per-mode solver for the linear
reaction-diffusion test problem: each spectral coefficient is an
Ornstein-Uhlenbeck process with decay rate D*lambda_{i,j} + lambda_reaction,
which can be advanced exactly over any time step.
"""

from dataclasses import dataclass

import numpy as np
from scipy import fft as _fft

from .grid import Grid, Layout


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated cosine eigenbasis: modes (i, j) in {0..N-1}^2 on [0,Lx]x[0,Ly]."""

    N: int
    Lx: float
    Ly: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"need N >= 1, got {self.N}")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("domain lengths must be positive")

    @property
    def lambda1(self) -> np.ndarray:
        """Per-axis x eigenvalues (i*pi/Lx)^2, length N."""
        return (np.arange(self.N) * np.pi / self.Lx) ** 2

    @property
    def lambda2(self) -> np.ndarray:
        return (np.arange(self.N) * np.pi / self.Ly) ** 2

    def eigenvalues(self) -> np.ndarray:
        """N x N matrix of lambda_{i,j} = lambda1[i] + lambda2[j]."""
        return self.lambda1[:, None] + self.lambda2[None, :]

    def axis_rates(self) -> tuple[np.ndarray, np.ndarray]:
        """Wavenumbers (i*pi/Lx, j*pi/Ly) used by covariance spectra."""
        return (np.arange(self.N) * np.pi / self.Lx,
                np.arange(self.N) * np.pi / self.Ly)


def eigenvalue(basis: SpectralBasis, i: int, j: int) -> float:
    """Eigenvalue lambda_{i,j} of the negative Neumann Laplacian."""
    if not (0 <= i < basis.N and 0 <= j < basis.N):
        raise IndexError(f"mode ({i}, {j}) outside truncation {basis.N}")
    return float((i * np.pi / basis.Lx) ** 2 + (j * np.pi / basis.Ly) ** 2)


def _check_compatible(basis: SpectralBasis, grid: Grid) -> None:
    if not (np.isclose(basis.Lx, grid.Lx) and np.isclose(basis.Ly, grid.Ly)):
        raise ValueError("basis and grid cover different rectangles")
    if basis.N > min(grid.nx, grid.ny):
        raise ValueError(
            f"truncation N={basis.N} exceeds grid resolution "
            f"min(nx, ny)={min(grid.nx, grid.ny)}; aliasing rejected")


def _eval_matrix(n: int, L: float, coords: np.ndarray, N: int) -> np.ndarray:
    """Dense evaluation matrix E[k, i] = e_i(coords[k]), shape (n, N)."""
    amp = np.full(N, np.sqrt(2.0 / L))
    amp[0] = np.sqrt(1.0 / L)
    i = np.arange(N)
    return amp[None, :] * np.cos(i[None, :] * np.pi * coords[:, None] / L)


def _axis_amplitudes(L: float, N: int) -> np.ndarray:
    amp = np.full(N, np.sqrt(2.0 / L))
    amp[0] = np.sqrt(1.0 / L)
    return amp


def synthesize(basis: SpectralBasis, coeffs: np.ndarray, grid: Grid,
               dense: bool = False) -> np.ndarray:
    """Evaluate sum_{i,j} coeffs[i,j] e_i(x) e_j(y) at the grid points.

    The default path runs one cosine transform per axis; ``dense=True``
    forces the explicit summation oracle.  Both agree to ~1e-12.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.N, basis.N):
        raise ValueError(f"coefficient shape {coeffs.shape} != ({basis.N}, {basis.N})")
    _check_compatible(basis, grid)

    if dense:
        Ex = _eval_matrix(grid.nx, grid.Lx, grid.x_coords(), basis.N)
        Ey = _eval_matrix(grid.ny, grid.Ly, grid.y_coords(), basis.N)
        return (Ex @ coeffs @ Ey.T).ravel()

    padded = np.zeros((grid.nx, grid.ny))
    padded[: basis.N, : basis.N] = coeffs
    out = _cosine_synthesis_axis(padded, grid.nx, grid.Lx, grid.layout, axis=0)
    out = _cosine_synthesis_axis(out, grid.ny, grid.Ly, grid.layout, axis=1)
    return out.ravel()


def _cosine_synthesis_axis(a: np.ndarray, n: int, L: float, layout: Layout,
                           axis: int) -> np.ndarray:
    if layout is Layout.NODE_CENTERED:
        amp = _axis_amplitudes(L, n)
        # DCT-I weights: endpoint coefficients enter with factor 1, interior 2.
        g = np.full(n, 2.0)
        g[0] = 1.0
        g[-1] = 1.0
        shape = [1, 1]
        shape[axis] = n
        return _fft.dct(a * (amp / g).reshape(shape), type=1, axis=axis)
    # Cell centers: orthonormal DCT-III differs from e_i sampling by sqrt(n/L).
    return _fft.idct(a * np.sqrt(n / L), type=2, axis=axis, norm="ortho")


def _cosine_analysis_axis(f: np.ndarray, n: int, L: float, layout: Layout,
                          axis: int) -> np.ndarray:
    amp = _axis_amplitudes(L, n)
    shape = [1, 1]
    shape[axis] = n
    amp = amp.reshape(shape)
    if layout is Layout.NODE_CENTERED:
        dx = L / (n - 1)
        return amp * dx / 2.0 * _fft.dct(f, type=1, axis=axis)
    dx = L / n
    return amp * dx / 2.0 * _fft.dct(f, type=2, axis=axis)


def analyze(basis: SpectralBasis, field: np.ndarray, grid: Grid) -> np.ndarray:
    """Quadrature inner products (field, e_i e_j), returned as an N x N matrix.

    Inverse of :func:`synthesize` on coefficient space for N <= min(nx, ny).
    """
    field = np.asarray(field, dtype=float)
    if field.size != grid.size:
        raise ValueError(f"field length {field.size} != grid size {grid.size}")
    _check_compatible(basis, grid)
    f = field.reshape(grid.nx, grid.ny)
    c = _cosine_analysis_axis(f, grid.nx, grid.Lx, grid.layout, axis=0)
    c = _cosine_analysis_axis(c, grid.ny, grid.Ly, grid.layout, axis=1)
    return c[: basis.N, : basis.N]


def exact_linear_step(
    basis: SpectralBasis,
    coeffs: np.ndarray,
    D: float,
    lambda_reaction: float,
    dt: float,
    ou_draws: np.ndarray,
    q: np.ndarray,
) -> np.ndarray:
    """Advance spectral coefficients of dX = (D Lap X - lambda X) dt + dW exactly.

    Each mode is an Ornstein-Uhlenbeck process with rate
    c = D lambda_{i,j} + lambda_reaction:

        new = exp(-c dt) old + sigma(c, q, dt) * Z,
        sigma^2 = q (1 - exp(-2 c dt)) / (2 c),

    with the dt-limit q*dt at c = 0.  ``ou_draws`` supplies the standard
    normal Z per mode.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    coeffs = np.asarray(coeffs, dtype=float)
    q = np.asarray(q, dtype=float)
    ou_draws = np.asarray(ou_draws, dtype=float)
    if coeffs.shape != (basis.N, basis.N):
        raise ValueError("coefficient shape mismatch")
    c = D * basis.eigenvalues() + lambda_reaction
    from .noise import ou_increment_std, Convention  # local import: cycle-free

    sigma = ou_increment_std(c, q, dt, Convention.ITO_ISOMETRY)
    return np.exp(-c * dt) * coeffs + sigma * ou_draws
