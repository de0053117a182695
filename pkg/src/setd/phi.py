"""Action of the exponential-integrator functions phi0 and phi1 on vectors.

phi0(z) = exp(z) and phi1(z) = (exp(z) - 1)/z (with phi1(0) = 1) drive the
exponential time stepping.  Three evaluation routes are provided for
w = phi_i(dt A) v:

* dense   -- scaling-and-squaring on the full matrix; phi1 comes from the
             top-right block of expm([[M, I], [0, 0]]).  Desk-scale oracle.
* krylov  -- Arnoldi projection onto K_m(A, v); the small projected matrix
             is augmented with the h_{m+1,m} coupling row and handed to the
             dense route, w ~= ||v|| V_{m+1} phi_i(dt Hbar) e1.  The last
             component of the small solution drives adaptive sub-stepping.
* leja    -- Newton interpolation of phi_i at real fast Leja points of
             [-2, 2], mapped onto the Gershgorin interval [alpha, beta] of
             dt A via c = (alpha+beta)/2, gamma = (beta-alpha)/4.  Divided
             differences are read off as the first column of phi_i(L_m) for
             the bidiagonal node matrix L_m = c I + gamma Lhat_m, computed
             by a Taylor expansion with scaling and squaring (the naive
             recursion loses all accuracy once the differences fall below
             machine precision).

Both iterative routes sub-step in time when the spectral interval is too
wide for the requested accuracy, composing exp(dt A) = exp(dt A / S)^S and
marching u' = A u + v for phi1.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = [
    "PhiConvergenceError",
    "KrylovConfig",
    "LejaConfig",
    "MatrixOperator",
    "phi_scalar",
    "dense_phi",
    "arnoldi",
    "krylov_phi_apply",
    "gershgorin_interval",
    "fast_leja_points",
    "divided_differences",
    "leja_phi_apply",
    "make_phi_applier",
    "DensePhiApplier",
    "KrylovPhiApplier",
    "LejaPhiApplier",
]

_DENSE_LIMIT = 1024


class PhiConvergenceError(RuntimeError):
    """Raised when an iterative phi evaluation misses its tolerance budget."""

    def __init__(self, msg: str, achieved: float | None = None):
        super().__init__(msg)
        self.achieved = achieved


@dataclass(frozen=True)
class KrylovConfig:
    m: int = 6
    tol: float = 1e-6
    max_restarts: int = 40

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("Krylov dimension must be >= 1")


@dataclass(frozen=True)
class LejaConfig:
    max_degree: int = 300
    tol: float = 1e-6
    interval_pad: float = 0.0
    # pre-split dt so the scaled interval half-width stays below gamma_split
    # (bounds the interpolation degree) and the positive interval end below
    # beta_split (bounds the e^beta cancellation floor of the Newton sum)
    gamma_split: float = 200.0
    beta_split: float = 10.0
    max_splits: int = 40

    def __post_init__(self):
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")


class MatrixOperator:
    """Wrap a dense or sparse matrix in the minimal operator interface."""

    def __init__(self, matrix, symmetric: bool | None = None):
        self.matrix = matrix
        self.n = matrix.shape[0]
        if symmetric is None and hasattr(matrix, "T") and not hasattr(matrix, "tocsr"):
            symmetric = bool(np.allclose(matrix, matrix.T))
        self.symmetric = bool(symmetric)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ v)

    def diagonal(self) -> np.ndarray:
        if hasattr(self.matrix, "diagonal"):
            return np.asarray(self.matrix.diagonal()).ravel()
        return np.diag(self.matrix)

    def offdiag_abs_row_sums(self) -> np.ndarray:
        m = self.matrix.toarray() if hasattr(self.matrix, "toarray") else np.asarray(self.matrix)
        return np.sum(np.abs(m), axis=1) - np.abs(np.diag(m))

    def to_dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if hasattr(m, "toarray") else np.asarray(m, dtype=float)


def dense_phi(M: np.ndarray, i: int) -> np.ndarray:
    """phi_i of a small square matrix via scaling and squaring.

    phi1 uses the augmented block matrix [[M, I], [0, 0]], whose exponential
    carries phi1(M) in its top-right block.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("square matrix expected")
    n = M.shape[0]
    if n > _DENSE_LIMIT:
        raise ValueError(f"dense phi oracle limited to n <= {_DENSE_LIMIT}, got {n}")
    if i not in (0, 1):
        raise ValueError("phi index must be 0 or 1")
    if not np.all(np.isfinite(M)):
        raise FloatingPointError("non-finite entries in matrix")
    if i == 0:
        out = expm(M)
    else:
        aug = np.zeros((2 * n, 2 * n))
        aug[:n, :n] = M
        aug[:n, n:] = np.eye(n)
        out = expm(aug)[:n, n:]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("overflow in dense phi evaluation")
    return out


def phi_scalar(z: float, i: int) -> float:
    """phi_i of a scalar: exp(z) or expm1(z)/z with the removable singularity."""
    if i == 0:
        return math.exp(z)
    if abs(z) < 1e-8:
        return 1.0 + z / 2.0 + z * z / 6.0
    return math.expm1(z) / z


def arnoldi(op, v: np.ndarray, m: int):
    """Arnoldi iteration with modified Gram-Schmidt and one reorthogonalization.

    Returns ``(V, H, breakdown)``.  Without breakdown V has m+1 orthonormal
    columns and H is the (m+1) x m Hessenberg-plus-row matrix satisfying
    A V[:, :m] = V H.  On breakdown at step k the Krylov space is invariant:
    V has k columns, H is k x k and A V = V H exactly.
    """
    v = np.asarray(v, dtype=float)
    beta = np.linalg.norm(v)
    if beta == 0.0:
        raise ValueError("Arnoldi needs a nonzero start vector")
    n = v.size
    m = min(m, n)
    V = np.zeros((n, m + 1))
    H = np.zeros((m + 1, m))
    V[:, 0] = v / beta
    scale = 0.0
    for k in range(m):
        w = op.apply(V[:, k])
        for it in range(2):  # MGS + reorthogonalization pass
            coeffs = V[:, : k + 1].T @ w
            w = w - V[:, : k + 1] @ coeffs
            H[: k + 1, k] += coeffs
        h = np.linalg.norm(w)
        scale = max(scale, np.abs(H[: k + 1, k]).max(initial=0.0))
        if h <= 1e-14 * max(scale, 1.0):
            return V[:, : k + 1], H[: k + 1, : k + 1], True
        H[k + 1, k] = h
        V[:, k + 1] = w / h
    return V, H, False


def _krylov_small_solution(op, w: np.ndarray, tau: float, i: int, m: int):
    """One projected phi_i(tau A) w evaluation plus its residual estimate."""
    beta = np.linalg.norm(w)
    if beta == 0.0:
        return np.zeros_like(w), 0.0
    V, H, breakdown = arnoldi(op, w, m)
    if breakdown:
        small = dense_phi(tau * H, i)[:, 0]
        return beta * (V @ small), 0.0
    k = H.shape[1]
    hbar = np.zeros((k + 1, k + 1))
    hbar[: k + 1, :k] = H
    small = dense_phi(tau * hbar, i)[:, 0]
    err = beta * abs(small[k])
    return beta * (V @ small), err


def krylov_phi_apply(op, v: np.ndarray, dt: float, i: int,
                     cfg: KrylovConfig = KrylovConfig()) -> np.ndarray:
    """phi_i(dt A) v by Krylov projection with adaptive time sub-stepping."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return np.zeros_like(v)

    substeps = 1
    achieved = float("inf")
    for attempt in range(cfg.max_restarts):
        try:
            return _krylov_march(op, v, dt, i, substeps, cfg)
        except _SubstepTooCoarse as exc:
            substeps *= 2
            achieved = exc.achieved
    raise PhiConvergenceError(
        f"Krylov phi{i} did not reach tol={cfg.tol} within "
        f"{cfg.max_restarts} restarts (achieved ~{achieved:.2e})",
        achieved=achieved)


class _SubstepTooCoarse(Exception):
    def __init__(self, achieved: float):
        self.achieved = achieved


def _krylov_march(op, v, dt, i, substeps, cfg):
    tau = dt / substeps
    budget = cfg.tol / substeps
    if i == 0:
        w = v
        for _ in range(substeps):
            w, err = _krylov_small_solution(op, w, tau, 0, cfg.m)
            if err > budget:
                raise _SubstepTooCoarse(err)
        return w
    # phi1 via the ODE u' = A u + v:  u(t+tau) = exp(tau A) u + tau phi1(tau A) v
    forcing, err_f = _krylov_small_solution(op, v, tau, 1, cfg.m)
    if err_f > budget:
        raise _SubstepTooCoarse(err_f)
    u = tau * forcing
    for _ in range(substeps - 1):
        u, err = _krylov_small_solution(op, u, tau, 0, cfg.m)
        if err > budget:
            raise _SubstepTooCoarse(err)
        u = u + tau * forcing
    return u / dt


def gershgorin_interval(op) -> tuple[float, float]:
    """Real interval [alpha, beta] enclosing the spectrum by row discs."""
    d = np.asarray(op.diagonal(), dtype=float)
    r = np.asarray(op.offdiag_abs_row_sums(), dtype=float)
    return float(np.min(d - r)), float(np.max(d + r))


# ---------------------------------------------------------------------------
# fast Leja points on [-2, 2]

_leja_points: list[float] = []
_leja_cands: list[float] = []
_leja_logprod: list[float] = []
_leja_sorted: list[float] = []


def _extend_leja(count: int) -> None:
    global _leja_points, _leja_cands, _leja_logprod, _leja_sorted
    import bisect

    if not _leja_points:
        _leja_points = [2.0, -2.0]
        _leja_sorted = [-2.0, 2.0]
        _leja_cands = [0.0]
        _leja_logprod = [math.log(2.0) + math.log(2.0)]
    while len(_leja_points) < count:
        idx = int(np.argmax(_leja_logprod))
        new = _leja_cands.pop(idx)
        _leja_logprod.pop(idx)
        _leja_points.append(new)
        pos = bisect.bisect_left(_leja_sorted, new)
        _leja_sorted.insert(pos, new)
        left, right = _leja_sorted[pos - 1], _leja_sorted[pos + 1]
        for c in ((left + new) / 2.0, (new + right) / 2.0):
            lp = float(sum(math.log(abs(c - p)) for p in _leja_points))
            _leja_cands.append(c)
            _leja_logprod.append(lp)
        for t in range(len(_leja_logprod) - 2):
            _leja_logprod[t] += math.log(abs(_leja_cands[t] - new))


def fast_leja_points(count: int) -> np.ndarray:
    """First ``count`` real fast Leja points of [-2, 2] (2, -2, 0, ...).

    The sequence starts at the right endpoint, continues greedily so each new
    point maximizes the product of distances to all accepted points, and
    restricts the search to midpoints of adjacent accepted points (the fast
    construction).  Deterministic; computed once and cached.
    """
    if count < 1:
        raise ValueError("need count >= 1")
    if count == 1:
        return np.array([2.0])
    _extend_leja(count)
    return np.array(_leja_points[:count])


def divided_differences(points: np.ndarray, i: int, c: float,
                        gamma: float) -> np.ndarray:
    """Newton divided differences of phi_i(c + gamma xi) at the given nodes.

    Computed as the first column of phi_i(L_m) with L_m = c I + gamma Lhat_m
    (nodes on the diagonal, ones on the subdiagonal) by a degree-30 Taylor
    expansion after scaling the matrix to 1-norm <= 1/2, then undoing the
    scaling through the doubling identities phi0(2A) = phi0(A)^2 and
    phi1(2A) = (phi0(A) + I) phi1(A) / 2.
    """
    points = np.asarray(points, dtype=float)
    m = points.size - 1
    if m < 0:
        raise ValueError("need at least one interpolation node")
    if np.unique(points).size != points.size:
        raise ValueError("interpolation nodes must be distinct")
    if i not in (0, 1):
        raise ValueError("phi index must be 0 or 1")
    L = np.diag(c + gamma * points) + np.diag(np.full(m, gamma), -1)
    norm1 = np.linalg.norm(L, 1)
    s = max(0, int(math.ceil(math.log2(norm1 / 0.5))) if norm1 > 0.5 else 0)
    A = L / (2.0 ** s)
    # Taylor sums for phi0 and phi1 of the scaled matrix
    eye = np.eye(m + 1)
    term = eye.copy()
    e0 = eye.copy()
    e1 = eye.copy()
    for k in range(1, 31):
        term = A @ term / k
        e0 = e0 + term
        e1 = e1 + term / (k + 1)
    for _ in range(s):
        e1 = 0.5 * ((e0 + eye) @ e1)
        e0 = e0 @ e0
    out = e0 if i == 0 else e1
    return out[:, 0].copy()


class _LejaDiverged(Exception):
    pass


def _leja_newton(op_apply, v, dd, points, c, gamma, tol, max_degree):
    """Newton-form accumulation p = sum_j dd[j] w_j; raises on divergence."""
    w = v.copy()
    p = dd[0] * v
    prev = np.inf
    growth = 0
    vnorm = np.linalg.norm(v)
    for j in range(min(max_degree, points.size - 1)):
        w = (op_apply(w) - (c + gamma * points[j]) * w) / gamma
        term = np.linalg.norm(w) * abs(dd[j + 1])
        p = p + dd[j + 1] * w
        if term < tol and prev < tol:
            return p, term, True
        growth = growth + 1 if term > prev else 0
        if growth >= 10 and term > 1e8 * max(vnorm, 1.0):
            raise _LejaDiverged
        prev = term
    return p, prev, prev < tol


class LejaPhiApplier:
    """Evaluator for phi_i(dt A) v caching nodes and divided differences.

    The node table, interval transform and divided differences depend only on
    (operator, dt, i), so repeated applications within a time-stepping run
    reuse them.
    """

    def __init__(self, cfg: LejaConfig = LejaConfig()):
        self.cfg = cfg
        self._dd_cache: dict = {}

    def __call__(self, op, v: np.ndarray, dt: float, i: int) -> np.ndarray:
        if dt <= 0:
            raise ValueError("dt must be positive")
        if i not in (0, 1):
            raise ValueError("phi index must be 0 or 1")
        v = np.asarray(v, dtype=float)
        if not np.any(v):
            return np.zeros_like(v)
        alpha, beta = gershgorin_interval(op)
        pad = self.cfg.interval_pad * (beta - alpha)
        alpha, beta = alpha - pad, beta + pad
        gamma_full = dt * (beta - alpha) / 4.0
        splits = max(1,
                     int(math.ceil(gamma_full / self.cfg.gamma_split)),
                     int(math.ceil(dt * max(beta, 0.0) / self.cfg.beta_split)))
        for attempt in range(self.cfg.max_splits):
            try:
                return self._march(op, v, dt, i, splits, alpha, beta)
            except _LejaDiverged:
                splits *= 2
        raise PhiConvergenceError(
            f"Leja phi{i} kept diverging after {self.cfg.max_splits} dt splits")

    def _march(self, op, v, dt, i, splits, alpha, beta):
        tau = dt / splits
        if i == 0:
            w = v
            for _ in range(splits):
                w = self._single(op, w, tau, 0, alpha, beta)
            return w
        forcing = self._single(op, v, tau, 1, alpha, beta)
        u = tau * forcing
        for _ in range(splits - 1):
            u = self._single(op, u, tau, 0, alpha, beta) + tau * forcing
        return u / dt

    def _single(self, op, v, tau, i, alpha, beta):
        a, b = tau * alpha, tau * beta
        c = (a + b) / 2.0
        gamma = (b - a) / 4.0
        if gamma < 1e-300:
            return phi_scalar(c, i) * v
        key = (c, gamma, i)  # differences depend only on the scaled interval
        points, dd = self._dd_cache.get(key, (None, None))
        degree = 64
        while True:
            if points is None or points.size < degree + 1:
                points = fast_leja_points(degree + 1)
                dd = divided_differences(points, i, c, gamma)
                self._dd_cache[key] = (points, dd)
            p, achieved, ok = _leja_newton(
                lambda x: tau * op.apply(x), v, dd, points, c, gamma,
                self.cfg.tol, min(degree, self.cfg.max_degree))
            if ok:
                return p
            if degree >= self.cfg.max_degree:
                raise PhiConvergenceError(
                    f"Leja phi{i} hit max_degree={self.cfg.max_degree} "
                    f"with estimate {achieved:.2e} > tol {self.cfg.tol}",
                    achieved=achieved)
            degree = min(2 * degree, self.cfg.max_degree)


def leja_phi_apply(op, v: np.ndarray, dt: float, i: int,
                   cfg: LejaConfig = LejaConfig()) -> np.ndarray:
    """phi_i(dt A) v by Newton interpolation at real fast Leja points."""
    return LejaPhiApplier(cfg)(op, v, dt, i)


class KrylovPhiApplier:
    def __init__(self, cfg: KrylovConfig = KrylovConfig()):
        self.cfg = cfg

    def __call__(self, op, v, dt, i):
        return krylov_phi_apply(op, v, dt, i, self.cfg)


class DensePhiApplier:
    """Materializes phi_i(dt A) once per (operator, dt, i); small systems only."""

    def __init__(self):
        self._cache: dict = {}

    def __call__(self, op, v, dt, i):
        key = (id(op), dt, i)
        if key not in self._cache:
            # op kept alive in the cache so id() stays unambiguous
            self._cache[key] = (op, dense_phi(dt * op.to_dense(), i))
        return self._cache[key][1] @ np.asarray(v, dtype=float)


class AutoPhiApplier:
    """Krylov for phi1 on nonsymmetric operators, Leja everywhere else."""

    def __init__(self, krylov_cfg: KrylovConfig, leja_cfg: LejaConfig):
        self._krylov = KrylovPhiApplier(krylov_cfg)
        self._leja = LejaPhiApplier(leja_cfg)

    def __call__(self, op, v, dt, i):
        if i == 1 and not getattr(op, "symmetric", True):
            return self._krylov(op, v, dt, i)
        return self._leja(op, v, dt, i)


def make_phi_applier(method: str = "auto", tol: float = 1e-6,
                     krylov_m: int = 6, leja_max_degree: int = 300):
    """Factory mapping the phi.method config key to an applier callable."""
    kcfg = KrylovConfig(m=krylov_m, tol=tol)
    lcfg = LejaConfig(max_degree=leja_max_degree, tol=tol)
    if method == "krylov":
        return KrylovPhiApplier(kcfg)
    if method == "leja":
        return LejaPhiApplier(lcfg)
    if method == "dense":
        return DensePhiApplier()
    if method == "auto":
        return AutoPhiApplier(kcfg, lcfg)
    raise ValueError(f"unknown phi method {method!r}")
