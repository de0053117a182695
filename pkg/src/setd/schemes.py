"""Time-stepping schemes for dX = (A X + F(X)) dt + dW on the grid.

Exponential integrators (one phi action per step, noise entering as the
exact per-mode linear functional O_k synthesized to physical space):

    SETD1:  X+ = X + dt phi1(dt A)(A X + F(X) + b) + S(O_k)
    SETD0:  X+ = phi0(dt A)(X + dt (F(X) + b))     + S(O_k)

Semi-implicit Euler-Maruyama baselines share the left-hand side
(I - dt A) X+ = X + dt (F(X) + b) + noise, where the standard variant feeds
plain Brownian increments sqrt(q dt) R per mode and the modified variant the
same O_k functional as the exponential schemes (identical R draws, so all
four schemes ride one Brownian path).

For the linear reaction problem dX = (D Lap X - lambda X) dt + dW with
Neumann boundaries the solution is computed exactly per spectral mode; the
reference and the schemes stay on a common path through the jointly Gaussian
coupling of the rate-(D lambda + lambda_r) and rate-(D lambda) integrals.
"""

from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg, bicgstab, splu

from .grid import Grid
from .noise import (Convention, NoiseSpec, RngStream, aggregate_increments,
                    coupled_pair_factors, ou_increment_std, q_matrix)
from .operators import BoundaryVector, OperatorHandle
from .phi import make_phi_applier
from .spectral import SpectralBasis, synthesize

__all__ = [
    "SchemeKind",
    "SchemeConfig",
    "Problem",
    "NoiseSource",
    "step_setd1",
    "step_setd0",
    "step_semi_implicit",
    "integrate",
    "exact_linear_reference",
    "linear_reference_with_path",
    "guarded_reaction",
]


class SchemeKind(Enum):
    SETD1 = "SETD1"
    SETD0 = "SETD0"
    SEMI_IMPLICIT_STD = "SemiImplicitStd"
    SEMI_IMPLICIT_MODIFIED = "SemiImplicitModified"


@dataclass(frozen=True)
class PhiConfig:
    method: str = "auto"      # krylov | leja | dense | auto
    tol: float = 1e-6
    krylov_m: int = 6
    leja_max_degree: int = 300

    def make(self):
        return make_phi_applier(self.method, self.tol, self.krylov_m,
                                self.leja_max_degree)


@dataclass(frozen=True)
class SchemeConfig:
    kind: SchemeKind
    dt: float
    steps: int
    phi: PhiConfig = dc_field(default_factory=PhiConfig)
    convention: Convention = Convention.ITO_ISOMETRY
    linear_solver: str = "direct"    # direct | cg | bicgstab

    def __post_init__(self):
        if self.dt <= 0 or self.steps < 0:
            raise ValueError("need dt > 0 and steps >= 0")

    @property
    def T(self) -> float:
        return self.dt * self.steps


def guarded_reaction(u: np.ndarray) -> np.ndarray:
    """-u/(u+1) with the pole at u = -1 clipped so outputs stay finite."""
    denom = u + 1.0
    denom = np.where(np.abs(denom) < 1e-8, np.copysign(1e-8, denom), denom)
    return -u / denom


@dataclass
class Problem:
    """Spatially discretized SPDE: operator, forcing, noise and initial data."""

    grid: Grid
    operator: OperatorHandle
    nonlinearity: Callable[[np.ndarray], np.ndarray]
    noise_spec: NoiseSpec
    basis: SpectralBasis
    x0: np.ndarray
    boundary_vector: BoundaryVector | None = None
    D: float = 1.0
    lambda_reaction: float = 0.0
    is_linear_reaction: bool = False

    def forcing(self, u: np.ndarray) -> np.ndarray:
        f = self.nonlinearity(u)
        if self.boundary_vector is not None:
            f = f + self.boundary_vector.values
        return f

    def noise_rates(self) -> np.ndarray:
        """Per-mode decay rates of the truncated generator, D * lambda_{i,j}."""
        return self.D * self.basis.eigenvalues()

    @staticmethod
    def linear_reaction(grid: Grid, operator: OperatorHandle, D: float,
                        lam: float, noise_spec: NoiseSpec,
                        basis: SpectralBasis,
                        x0: np.ndarray | None = None) -> "Problem":
        if x0 is None:
            x0 = np.zeros(grid.size)
        return Problem(grid=grid, operator=operator,
                       nonlinearity=lambda u: -lam * u,
                       noise_spec=noise_spec, basis=basis, x0=x0,
                       D=D, lambda_reaction=lam, is_linear_reaction=True)


class NoiseSource:
    """Per-step noise functionals for one realization of one run.

    Each coarse step k covers ``substeps`` fine intervals of length
    ``dt_fine``; the fine draws are replayed from the keyed stream and
    combined with :func:`aggregate_increments`, so every run with the same
    (seed, realization, dt_fine) sees the same Brownian path no matter how
    coarse its own step is.  ``ou(k)`` is the exponential-weighted functional
    O_k, ``brownian(k)`` the plain increment of W.
    """

    def __init__(self, problem: Problem, rng: RngStream, realization: int,
                 dt_fine: float, substeps: int,
                 convention: Convention = Convention.ITO_ISOMETRY):
        if substeps < 1:
            raise ValueError("need at least one substep")
        self.problem = problem
        self.rng = rng
        self.realization = realization
        self.dt_fine = dt_fine
        self.substeps = substeps
        self.convention = convention
        self._rates = problem.noise_rates()
        self._q = q_matrix(problem.noise_spec, problem.basis)
        self._std_fine = ou_increment_std(self._rates, self._q, dt_fine,
                                          convention)
        self._sqrt_q_dt = np.sqrt(self._q * dt_fine)
        self._zero_rates = np.zeros_like(self._rates)

    def _fine_blocks(self, k: int) -> list[np.ndarray]:
        N = self.problem.basis.N
        return [self.rng.mode_block(self.realization, k * self.substeps + s, N)
                for s in range(self.substeps)]

    def ou(self, k: int) -> np.ndarray:
        fine = [self._std_fine * b for b in self._fine_blocks(k)]
        return aggregate_increments(fine, self._rates, self.dt_fine)

    def brownian(self, k: int) -> np.ndarray:
        fine = [self._sqrt_q_dt * b for b in self._fine_blocks(k)]
        return aggregate_increments(fine, self._zero_rates, self.dt_fine)


def step_setd1(state: np.ndarray, problem: Problem, dt: float, phi,
               noise_field: np.ndarray | None = None) -> np.ndarray:
    """One SETD1 step: a single phi1 action on A X + F(X) (+ b)."""
    rhs = problem.operator.apply(state) + problem.forcing(state)
    out = state + dt * phi(problem.operator, rhs, dt, 1)
    if noise_field is not None:
        out = out + noise_field
    return out


def step_setd0(state: np.ndarray, problem: Problem, dt: float, phi,
               noise_field: np.ndarray | None = None) -> np.ndarray:
    """One SETD0 step: a single phi0 action on X + dt (F(X) + b)."""
    out = phi(problem.operator, state + dt * problem.forcing(state), dt, 0)
    if noise_field is not None:
        out = out + noise_field
    return out


class _ImplicitSolver:
    """Cached solver for (I - dt A) x = rhs."""

    def __init__(self, problem: Problem, dt: float, method: str):
        self.method = method
        self.grid = problem.grid
        A = problem.operator.as_sparse()
        self.system = (sparse.identity(A.shape[0], format="csr") - dt * A).tocsc()
        self.symmetric = problem.operator.symmetric
        self._lu = None
        if method == "direct":
            self._lu = splu(self.system)
        elif method == "cg":
            # node-centered operators are self-adjoint only under the grid
            # quadrature weights; symmetrize by similarity with sqrt(w)
            self._sqw = np.sqrt(self.grid.weights())
            W = sparse.diags(self._sqw)
            Winv = sparse.diags(1.0 / self._sqw)
            self._sym_system = (W @ self.system @ Winv).tocsr()

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.method == "direct":
            return self._lu.solve(rhs)
        if self.method == "cg":
            x, info = cg(self._sym_system, rhs * self._sqw,
                         rtol=1e-10, atol=0.0)
            if info != 0:
                raise RuntimeError(f"CG failed to converge (info={info})")
            return x / self._sqw
        x, info = bicgstab(self.system, rhs, rtol=1e-10, atol=0.0)
        if info != 0:
            raise RuntimeError(f"BiCGStab failed to converge (info={info})")
        return x


def step_semi_implicit(state: np.ndarray, problem: Problem, dt: float,
                       solver: _ImplicitSolver,
                       noise_field: np.ndarray | None = None) -> np.ndarray:
    rhs = state + dt * problem.forcing(state)
    if noise_field is not None:
        rhs = rhs + noise_field
    return solver.solve(rhs)


def make_implicit_solver(problem: Problem, dt: float,
                         method: str = "direct") -> _ImplicitSolver:
    if method not in ("direct", "cg", "bicgstab"):
        raise ValueError(f"unknown linear solver {method!r}")
    if method == "cg" and not problem.operator.symmetric:
        method = "bicgstab"
    return _ImplicitSolver(problem, dt, method)


def integrate(problem: Problem, scheme: SchemeConfig, realization: int,
              rng: RngStream, noise: NoiseSource | None = None,
              record_every: int | None = None):
    """Run ``scheme.steps`` steps from problem.x0; deterministic per (seed,
    realization).

    ``noise=None`` draws fresh functionals at the scheme's own dt.  Passing a
    :class:`NoiseSource` (possibly aggregating a finer path) couples this run
    to other resolutions.  With ``record_every`` set, returns the list of
    recorded fields (including the final one); otherwise just the final field.
    """
    if noise is None:
        noise = NoiseSource(problem, rng, realization, scheme.dt, 1,
                            scheme.convention)
    state = np.array(problem.x0, dtype=float, copy=True)
    snapshots = []
    phi = scheme.phi.make()
    solver = None
    if scheme.kind in (SchemeKind.SEMI_IMPLICIT_STD,
                       SchemeKind.SEMI_IMPLICIT_MODIFIED):
        solver = make_implicit_solver(problem, scheme.dt, scheme.linear_solver)

    for k in range(scheme.steps):
        try:
            if scheme.kind is SchemeKind.SEMI_IMPLICIT_STD:
                coeffs = noise.brownian(k)
            else:
                coeffs = noise.ou(k)
            noise_field = synthesize(problem.basis, coeffs, problem.grid)
            if scheme.kind is SchemeKind.SETD1:
                state = step_setd1(state, problem, scheme.dt, phi, noise_field)
            elif scheme.kind is SchemeKind.SETD0:
                state = step_setd0(state, problem, scheme.dt, phi, noise_field)
            else:
                state = step_semi_implicit(state, problem, scheme.dt, solver,
                                           noise_field)
        except Exception as exc:
            raise RuntimeError(
                f"{scheme.kind.value} failed at step {k} (t={k * scheme.dt:g}): "
                f"{exc}") from exc
        if record_every and (k + 1) % record_every == 0:
            snapshots.append(state.copy())
    if record_every:
        if scheme.steps == 0 or scheme.steps % record_every != 0:
            snapshots.append(state.copy())
        return snapshots
    return state


def linear_reference_with_path(problem: Problem, dt_fine: float, M_fine: int,
                               realization: int, rng: RngStream) -> np.ndarray:
    """Exact spectral coefficients at T = M_fine * dt_fine on the shared path.

    Per fine step the exact solution consumes the rate-(D lambda + lambda_r)
    Ornstein-Uhlenbeck integral; its scheme-rate sibling is the same keyed
    draw every :class:`NoiseSource` replays, so scheme runs at any coarser dt
    are coupled to this reference.
    """
    if not problem.is_linear_reaction:
        raise ValueError("exact reference requires the linear reaction problem")
    basis = problem.basis
    lam_modes = basis.eigenvalues()
    c_exact = problem.D * lam_modes + problem.lambda_reaction
    c_scheme = problem.D * lam_modes
    q = q_matrix(problem.noise_spec, basis)
    a, b, _ = coupled_pair_factors(c_exact, c_scheme, q, dt_fine)
    decay = np.exp(-c_exact * dt_fine)
    from .spectral import analyze

    coeffs = analyze(basis, problem.x0, problem.grid)
    for k in range(M_fine):
        z1 = rng.mode_block(realization, k, basis.N, RngStream.SCHEME_BLOCK)
        z2 = rng.mode_block(realization, k, basis.N, RngStream.COUPLING_BLOCK)
        coeffs = decay * coeffs + a * z1 + b * z2
    return coeffs


def exact_linear_reference(problem: Problem, dt_fine: float, M_fine: int,
                           realization: int, rng: RngStream) -> np.ndarray:
    """Final field of the exact linear solution, synthesized on the grid."""
    coeffs = linear_reference_with_path(problem, dt_fine, M_fine,
                                        realization, rng)
    return synthesize(problem.basis, coeffs, problem.grid)
