"""Spectral Q-Wiener noise: covariance spectra and Fourier-mode OU sampling.

The driving noise is W(x, t) = sum_{i+j>0} sqrt(q_{i,j}) e_i(x) e_j(y)
beta_{i,j}(t) with independent scalar Brownian motions beta_{i,j}.  Two
spectra are supported:

* power law        q_{i,j} = Gamma / (i + j)^r            (H^r-type noise)
* exponential      q_{i,j} = Gamma exp(-[(l1 b1)^2 + (l2 b2)^2] / (2 pi)),
  l1 = i pi / Lx, l2 = j pi / Ly, derived from the Gaussian covariance
  kernel with correlation lengths b1, b2.

Mode (0, 0) is always excluded (q = 0).

Per time step the schemes consume the linear functional

    O_k = int_{t_k}^{t_{k+1}} exp((t_{k+1} - s) A_N) dW^N(s),

an independent Gaussian per mode.  The Ito isometry gives its standard
deviation sqrt(q (1 - exp(-2 c dt)) / (2 c)) for decay rate c; the
PAPER_PREFACTOR convention multiplies this by an extra exp(-c dt) and is kept
selectable because both normalizations circulate.

Draws come from a stateless counter-based stream keyed by
(realization, step, block) so that time-refinement coupling and concurrent
realizations are reproducible regardless of evaluation order.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .spectral import SpectralBasis

__all__ = [
    "Convention",
    "NoiseKind",
    "NoiseSpec",
    "RngStream",
    "q_value",
    "q_matrix",
    "ou_increment_std",
    "sample_increment_field",
    "aggregate_increments",
    "sample_coupled_pair",
]


class Convention(Enum):
    ITO_ISOMETRY = "ito"
    PAPER_PREFACTOR = "prefactor"


class NoiseKind(Enum):
    POWER_LAW = "power"
    EXP_COVARIANCE = "expcov"


@dataclass(frozen=True)
class NoiseSpec:
    """Covariance spectrum description: kind, amplitude Gamma, truncation N."""

    kind: NoiseKind
    gamma: float
    N: int
    r: float = 1.0          # power-law smoothness exponent
    b1: float = 0.0         # exp-covariance correlation lengths
    b2: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("amplitude Gamma must be nonnegative")
        if self.kind is NoiseKind.EXP_COVARIANCE and (self.b1 <= 0 or self.b2 <= 0):
            raise ValueError("exp-covariance noise needs positive correlation lengths")

    @staticmethod
    def power_law(r: float, gamma: float, N: int) -> "NoiseSpec":
        return NoiseSpec(NoiseKind.POWER_LAW, gamma, N, r=r)

    @staticmethod
    def exp_covariance(b1: float, b2: float, gamma: float, N: int) -> "NoiseSpec":
        return NoiseSpec(NoiseKind.EXP_COVARIANCE, gamma, N, b1=b1, b2=b2)


def q_value(spec: NoiseSpec, i: int, j: int, basis: SpectralBasis) -> float:
    """Covariance eigenvalue q_{i,j}; zero for the excluded mode (0, 0)."""
    if i == 0 and j == 0:
        return 0.0
    if spec.kind is NoiseKind.POWER_LAW:
        return spec.gamma / (i + j) ** spec.r
    l1 = i * math.pi / basis.Lx
    l2 = j * math.pi / basis.Ly
    return spec.gamma * math.exp(-((l1 * spec.b1) ** 2 + (l2 * spec.b2) ** 2)
                                 / (2.0 * math.pi))


def q_matrix(spec: NoiseSpec, basis: SpectralBasis) -> np.ndarray:
    """All q_{i,j} for modes {0..N-1}^2 as an N x N matrix, q[0,0] = 0."""
    n = basis.N
    i = np.arange(n)
    if spec.kind is NoiseKind.POWER_LAW:
        s = i[:, None] + i[None, :]
        with np.errstate(divide="ignore"):
            q = spec.gamma / np.where(s > 0, s, 1).astype(float) ** spec.r
    else:
        l1, l2 = basis.axis_rates()
        q = spec.gamma * np.exp(-((l1[:, None] * spec.b1) ** 2
                                  + (l2[None, :] * spec.b2) ** 2) / (2.0 * np.pi))
    q[0, 0] = 0.0
    return q


class RngStream:
    """Counter-based normal draws addressable by (realization, step, block).

    Identical keys reproduce identical draws independent of call order, which
    is what lets a coarse time step rebuild the same Brownian path as the
    fine reference it is compared against.
    """

    SCHEME_BLOCK = 0      # draws R_{i,k} shared by every scheme
    COUPLING_BLOCK = 1    # auxiliary draws for the exact-reference coupling

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def normals(self, realization: int, step: int, block: int,
                shape: tuple[int, ...]) -> np.ndarray:
        ss = SeedSequence(self.seed, spawn_key=(realization, step, block))
        return Generator(Philox(ss)).standard_normal(shape)

    def mode_block(self, realization: int, step: int, N: int,
                   block: int = SCHEME_BLOCK) -> np.ndarray:
        """N x N standard normals R_{(i,j),k} for one time step."""
        return self.normals(realization, step, block, (N, N))


# Below this, (1 - exp(-2 c dt)) / (2 c) is replaced by its dt limit.
_RATE_DT_FLOOR = 1e-14


def _ou_variance(c, q, dt):
    c = np.asarray(c, dtype=float)
    q = np.asarray(q, dtype=float)
    x = 2.0 * c * dt
    small = x < _RATE_DT_FLOOR
    safe_c = np.where(small, 1.0, c)
    var = q * np.where(small, dt, -np.expm1(-x) / (2.0 * safe_c))
    return var


def ou_increment_std(c, q, dt: float,
                     convention: Convention = Convention.ITO_ISOMETRY):
    """Standard deviation of the per-mode noise functional over one step.

    ITO_ISOMETRY:    sqrt(q (1 - exp(-2 c dt)) / (2 c))
    PAPER_PREFACTOR: exp(-c dt) times the above

    Accepts scalars or arrays broadcast together; c -> 0 uses the sqrt(q dt)
    limit.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if np.any(np.asarray(c) < 0) or np.any(np.asarray(q) < 0):
        raise ValueError("rates and spectrum values must be nonnegative")
    std = np.sqrt(_ou_variance(c, q, dt))
    if convention is Convention.PAPER_PREFACTOR:
        std = np.exp(-np.asarray(c, dtype=float) * dt) * std
    if np.isscalar(c) and np.isscalar(q):
        return float(std)
    return std


def sample_increment_field(
    spec: NoiseSpec,
    basis: SpectralBasis,
    step: int,
    realization: int,
    dt: float,
    rate_map: np.ndarray,
    rng: RngStream,
    convention: Convention = Convention.ITO_ISOMETRY,
) -> np.ndarray:
    """One step's noise-functional coefficients sigma(c, q, dt) * R_{(i,j),k}.

    ``rate_map`` holds the per-mode decay rates (the schemes use
    D * lambda_{i,j}, the spectrum of the truncated generator).
    """
    rate_map = np.asarray(rate_map, dtype=float)
    if rate_map.shape != (basis.N, basis.N):
        raise ValueError("rate map shape mismatch")
    q = q_matrix(spec, basis)
    std = ou_increment_std(rate_map, q, dt, convention)
    return std * rng.mode_block(realization, step, basis.N)


def aggregate_increments(fine: list[np.ndarray] | np.ndarray,
                         rate_map: np.ndarray,
                         dt_fine: float) -> np.ndarray:
    """Combine consecutive substep noise functionals into one coarse functional.

    Uses the semigroup identity O_{[t, t+2d]} = exp(-c d) O_{[t, t+d]} +
    O_{[t+d, t+2d]} per mode: earlier substeps are damped by the remaining
    decay time.  A single substep passes through unchanged.
    """
    fine = list(fine)
    if not fine:
        raise ValueError("need at least one substep increment")
    rate_map = np.asarray(rate_map, dtype=float)
    n_sub = len(fine)
    out = np.array(fine[-1], dtype=float, copy=True)
    for s in range(n_sub - 1):
        remaining = (n_sub - 1 - s) * dt_fine
        out += np.exp(-rate_map * remaining) * fine[s]
    return out


def coupled_pair_factors(c1, c2, q, dt: float):
    """Mixing coefficients expressing the coupled pair through two iid normals.

    Returns (a, b, s2) such that

        x1 = a * Z1 + b * Z2      (rate-c1 integral)
        x2 = s2 * Z1              (rate-c2 integral)

    reproduces Var1 = q(1 - e^{-2 c1 dt})/(2 c1), Var2 likewise, and
    Cov = q(1 - e^{-(c1+c2) dt})/(c1 + c2).  Anchoring x2 on Z1 alone lets the
    scheme's own draws double as one leg of the pair.
    """
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    q = np.asarray(q, dtype=float)
    var1 = _ou_variance(c1, q, dt)
    var2 = _ou_variance(c2, q, dt)
    # q(1-e^{-(c1+c2)dt})/(c1+c2) is _ou_variance evaluated at rate (c1+c2)/2.
    cov = _ou_variance(0.5 * (c1 + c2), q, dt)
    s2 = np.sqrt(var2)
    a = np.where(var2 > 0, cov / np.where(var2 > 0, s2, 1.0), 0.0)
    # equal rates mean identical integrals: avoid the sqrt(eps) cancellation
    a = np.where(c1 == c2, s2, a)
    resid = np.where(c1 == c2, 0.0, np.maximum(var1 - a * a, 0.0))
    b = np.sqrt(resid)
    return a, b, s2


def sample_coupled_pair(c1, c2, q, dt: float, z1, z2):
    """Jointly Gaussian pair of OU integrals over one Brownian path.

    ``z1`` and ``z2`` are iid standard normals (arrays broadcast with the
    rates); the second output equals ou_increment_std(c2, q, dt) * z1, i.e.
    exactly the scheme-side functional drawn from z1.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if np.any(np.asarray(c1) < 0) or np.any(np.asarray(c2) < 0):
        raise ValueError("rates must be nonnegative")
    if np.any(np.asarray(q) < 0):
        raise ValueError("spectrum values must be nonnegative")
    a, b, s2 = coupled_pair_factors(c1, c2, q, dt)
    x1 = a * np.asarray(z1) + b * np.asarray(z2)
    x2 = s2 * np.asarray(z1)
    if np.isscalar(c1) and np.isscalar(c2) and np.isscalar(q) and np.isscalar(z1):
        return float(x1), float(x2)
    return x1, x2
