"""Monte-Carlo strong-error studies, order fitting and report emission.

A study draws, per realization, one Brownian path at the finest time
resolution; every coarser time step's noise functionals are aggregated from
that path, so all schemes and the reference see identical driving noise.
Errors are root mean square discrete-L2 distances at the final time, and the
empirical temporal order is the least-squares slope of log(error) against
log(dt).

Reports serialize to CSV (columns scheme,dt,rms_error,wall_s with the fitted
orders in '#' footer lines) with fixed number formatting so identical
seed/config reruns are byte-identical; wall-clock measurements are optional
for that reason.
"""

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import Boundary, EdgeBC, Grid, Layout, build_grid, l2_norm
from .noise import Convention, NoiseKind, NoiseSpec, RngStream
from .operators import (assemble_diffusion, darcy_solve,
                        load_permeability_csv, peclet_number,
                        permeability_streaks, upwind_advection)
from .phi import (KrylovConfig, LejaConfig, dense_phi, krylov_phi_apply,
                  leja_phi_apply)
from .schemes import (NoiseSource, PhiConfig, Problem, SchemeConfig,
                      SchemeKind, guarded_reaction, integrate,
                      linear_reference_with_path)
from .spectral import SpectralBasis, synthesize

__all__ = [
    "StudyConfig",
    "ConvergenceReport",
    "rms_error",
    "fit_order",
    "run_convergence_study",
    "run_phi_bench",
    "build_problem",
    "write_reports_csv",
    "read_reports_csv",
]

DEFAULT_LADDER = (1 / 10, 1 / 20, 1 / 40, 1 / 80, 1 / 160, 1 / 320)
DEFAULT_SCHEMES = (SchemeKind.SETD1, SchemeKind.SETD0,
                   SchemeKind.SEMI_IMPLICIT_STD)


@dataclass
class StudyConfig:
    """Everything a convergence run needs; mirrored by CLI flags/config keys."""

    problem: str = "linear"                 # linear | advection
    schemes: tuple = DEFAULT_SCHEMES
    dt_ladder: tuple = DEFAULT_LADDER
    realizations: int = 20
    seed: int = 0
    nx: int = 51
    ny: int = 51
    Lx: float = 1.0
    Ly: float = 1.0
    modes: int = 0                           # 0 -> max admissible
    noise_kind: NoiseKind = NoiseKind.POWER_LAW
    noise_r: float = 1.0
    noise_b1: float = 0.2
    noise_b2: float = 0.2
    gamma: float = 1.0
    D: float = 1.0
    reaction: float = 1.0                    # lambda of the linear problem
    T: float = 1.0
    phi: PhiConfig = dc_field(default_factory=lambda: PhiConfig(method="auto"))
    convention: Convention = Convention.ITO_ISOMETRY
    linear_solver: str = "direct"
    ref_refine: int = 8                      # reference dt = min ladder / this
    timing: bool = True
    # advection / Darcy settings
    peclet: float = 16.58
    background_k: float = 1.0
    streak_k: float = 100.0
    mu: float = 1.0
    p_left: float = 1.0
    p_right: float = 0.0
    permeability_csv: str | None = None
    dirichlet_value: float = 0.0

    def noise_spec(self, N: int) -> NoiseSpec:
        if self.noise_kind is NoiseKind.POWER_LAW:
            return NoiseSpec.power_law(self.noise_r, self.gamma, N)
        return NoiseSpec.exp_covariance(self.noise_b1, self.noise_b2,
                                        self.gamma, N)


@dataclass
class ConvergenceReport:
    """Per-scheme study outcome: the (dt, error) ladder plus fitted orders."""

    scheme: str
    dts: list[float]
    errors: list[float]
    wall_s: list[float]
    realizations: int
    seed: int
    order: float | None = None
    intercept: float | None = None
    residual: float | None = None
    plateau: list[bool] = dc_field(default_factory=list)
    order_decreasing: float | None = None
    decreasing_points: int = 0
    failures: list[str] = dc_field(default_factory=list)

    def finalize(self) -> "ConvergenceReport":
        pairs = [(d, e) for d, e in zip(self.dts, self.errors)
                 if np.isfinite(e) and e > 0]
        if len(pairs) >= 2:
            self.order, self.intercept, self.residual = fit_order(pairs)
        # plateau: error stopped decreasing along the (descending-dt) ladder
        self.plateau = [False] * len(self.errors)
        for d in range(1, len(self.errors)):
            if self.errors[d] >= self.errors[d - 1]:
                self.plateau[d] = True
        prefix = 1
        while prefix < len(self.errors) and not self.plateau[prefix]:
            prefix += 1
        self.decreasing_points = prefix
        if prefix >= 2:
            self.order_decreasing, _, _ = fit_order(
                list(zip(self.dts[:prefix], self.errors[:prefix])))
        return self


def rms_error(final_numeric: list[np.ndarray], final_reference: list[np.ndarray],
              grid: Grid) -> float:
    """Root mean square discrete-L2 error over coupled realizations."""
    if len(final_numeric) != len(final_reference):
        raise ValueError("realization counts differ")
    if not final_numeric:
        raise ValueError("need at least one realization")
    acc = 0.0
    for num, ref in zip(final_numeric, final_reference):
        acc += l2_norm(grid, np.asarray(num) - np.asarray(ref)) ** 2
    return float(np.sqrt(acc / len(final_numeric)))


def fit_order(pairs) -> tuple[float, float, float]:
    """Least-squares line through (log dt, log error); slope is the order."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two (dt, error) pairs")
    dts = np.array([p[0] for p in pairs], dtype=float)
    errs = np.array([p[1] for p in pairs], dtype=float)
    if np.any(dts <= 0) or np.any(errs <= 0):
        raise ValueError("dt and error values must be positive")
    x = np.log(dts)
    y = np.log(errs)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sum((y - (slope * x + intercept)) ** 2))
    return float(slope), float(intercept), resid


def build_problem(cfg: StudyConfig) -> tuple[Problem, dict]:
    """Assemble the configured problem; the dict carries derived quantities."""
    info: dict = {}
    if cfg.problem == "linear":
        grid = build_grid(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly, Layout.NODE_CENTERED)
        N = cfg.modes or min(grid.nx, grid.ny) - 1
        basis = SpectralBasis(N, cfg.Lx, cfg.Ly)
        op, _ = assemble_diffusion(grid, cfg.D)
        problem = Problem.linear_reaction(grid, op, cfg.D, cfg.reaction,
                                          cfg.noise_spec(N), basis)
        info["D"] = cfg.D
        return problem, info
    if cfg.problem != "advection":
        raise ValueError(f"unknown problem {cfg.problem!r}")

    boundary = Boundary(left=EdgeBC.dirichlet(cfg.dirichlet_value),
                        right=EdgeBC.dirichlet(cfg.dirichlet_value),
                        bottom=EdgeBC.neumann(), top=EdgeBC.neumann())
    grid = build_grid(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly, Layout.CELL_CENTERED,
                      boundary)
    N = cfg.modes or min(grid.nx, grid.ny) - 1
    basis = SpectralBasis(N, cfg.Lx, cfg.Ly)
    if cfg.permeability_csv:
        k = load_permeability_csv(cfg.permeability_csv, grid)
    else:
        k = permeability_streaks(grid, cfg.background_k, cfg.streak_k)
    vel = darcy_solve(grid, k, cfg.mu, cfg.p_left, cfg.p_right)
    # diffusivity set from the target Peclet number ||q|| L / D
    D = vel.max_speed() * cfg.Lx / cfg.peclet
    diff_op, b_diff = assemble_diffusion(grid, D, boundary)
    adv_op, b_adv = upwind_advection(grid, vel, boundary, cfg.dirichlet_value)
    b = b_diff + b_adv

    def forcing(u, _adv=adv_op):
        return _adv.apply(u) + guarded_reaction(u)

    problem = Problem(grid=grid, operator=diff_op, nonlinearity=forcing,
                      noise_spec=cfg.noise_spec(N), basis=basis,
                      x0=np.zeros(grid.size), boundary_vector=b, D=D)
    info.update(D=D, velocity=vel, permeability=k,
                peclet=peclet_number(vel, cfg.Lx, D))
    return problem, info


def _ladder_substeps(dt_ladder, dt_fine: float) -> list[int]:
    subs = []
    for dt in dt_ladder:
        s = dt / dt_fine
        if abs(s - round(s)) > 1e-9:
            raise ValueError(
                f"ladder dt {dt} is not an integer multiple of the fine dt "
                f"{dt_fine}")
        subs.append(round(s))
    return subs


def run_convergence_study(cfg: StudyConfig) -> list[ConvergenceReport]:
    """Coupled-path strong convergence study; one report per scheme."""
    ladder = sorted(set(float(d) for d in cfg.dt_ladder), reverse=True)
    if not ladder:
        raise ValueError("empty dt ladder")
    if cfg.realizations < 1:
        raise ValueError("need at least one realization")
    problem, _info = build_problem(cfg)
    rng = RngStream(cfg.seed)
    grid = problem.grid

    if cfg.problem == "linear":
        dt_fine = ladder[-1]
    else:
        dt_fine = ladder[-1] / cfg.ref_refine
    M_fine = round(cfg.T / dt_fine)
    if abs(M_fine * dt_fine - cfg.T) > 1e-9 * cfg.T:
        raise ValueError("T must be an integer multiple of the finest dt")
    subs = _ladder_substeps(ladder, dt_fine)

    reports = {k: ConvergenceReport(scheme=k.value, dts=list(ladder),
                                    errors=[0.0] * len(ladder),
                                    wall_s=[0.0] * len(ladder),
                                    realizations=cfg.realizations,
                                    seed=cfg.seed)
               for k in cfg.schemes}
    sq_acc = {k: np.zeros(len(ladder)) for k in cfg.schemes}
    fail = {k: [None] * len(ladder) for k in cfg.schemes}

    for r in range(cfg.realizations):
        reference = _reference_field(problem, cfg, dt_fine, M_fine, r, rng)
        for d, dt in enumerate(ladder):
            steps = round(cfg.T / dt)
            for kind in cfg.schemes:
                if fail[kind][d] is not None:
                    continue
                scfg = SchemeConfig(kind, dt, steps, cfg.phi, cfg.convention,
                                    cfg.linear_solver)
                source = NoiseSource(problem, rng, r, dt_fine, subs[d],
                                     cfg.convention)
                t0 = time.perf_counter()
                try:
                    final = integrate(problem, scfg, r, rng, noise=source)
                except Exception as exc:  # study continues, cell is flagged
                    fail[kind][d] = str(exc)
                    continue
                reports[kind].wall_s[d] += time.perf_counter() - t0
                sq_acc[kind][d] += l2_norm(grid, final - reference) ** 2

    out = []
    for kind in cfg.schemes:
        rep = reports[kind]
        for d in range(len(ladder)):
            if fail[kind][d] is not None:
                rep.errors[d] = float("nan")
                rep.failures.append(f"dt={ladder[d]:g}: {fail[kind][d]}")
            else:
                rep.errors[d] = float(np.sqrt(sq_acc[kind][d] / cfg.realizations))
        if not cfg.timing:
            rep.wall_s = [0.0] * len(ladder)
        out.append(rep.finalize())
    return out


def _reference_field(problem: Problem, cfg: StudyConfig, dt_fine: float,
                     M_fine: int, realization: int, rng: RngStream) -> np.ndarray:
    if cfg.problem == "linear":
        coeffs = linear_reference_with_path(problem, dt_fine, M_fine,
                                            realization, rng)
        return synthesize(problem.basis, coeffs, problem.grid)
    scfg = SchemeConfig(SchemeKind.SETD1, dt_fine, M_fine, cfg.phi,
                        cfg.convention, cfg.linear_solver)
    source = NoiseSource(problem, rng, realization, dt_fine, 1, cfg.convention)
    return integrate(problem, scfg, realization, rng, noise=source)


# ---------------------------------------------------------------------------
# CSV emission

def _fmt(x: float) -> str:
    # shortest representation that parses back to the same float
    return repr(float(x))


def write_reports_csv(reports: list[ConvergenceReport], path) -> None:
    lines = ["scheme,dt,rms_error,wall_s"]
    for rep in reports:
        for dt, err, w in zip(rep.dts, rep.errors, rep.wall_s):
            lines.append(f"{rep.scheme},{_fmt(dt)},{_fmt(err)},{w:.6f}")
    for rep in reports:
        lines.append(_footer_line(rep))
        for msg in rep.failures:
            lines.append(f"# scheme={rep.scheme} failure {msg}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _footer_line(rep: ConvergenceReport) -> str:
    def opt(x):
        return "nan" if x is None else _fmt(x)

    plateau = "".join("1" if p else "0" for p in rep.plateau)
    return (f"# scheme={rep.scheme} order={opt(rep.order)} "
            f"intercept={opt(rep.intercept)} residual={opt(rep.residual)} "
            f"order_decreasing={opt(rep.order_decreasing)} "
            f"decreasing_points={rep.decreasing_points} plateau={plateau} "
            f"realizations={rep.realizations} seed={rep.seed}")


def read_reports_csv(path) -> list[ConvergenceReport]:
    """Parse a converge CSV back into reports (round-trips written files)."""
    rows: dict[str, ConvergenceReport] = {}
    footer: dict[str, dict] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = dict(p.split("=", 1) for p in line[1:].split()
                             if "=" in p)
                if "scheme" in parts and "order" in parts:
                    footer[parts["scheme"]] = parts
                continue
            if line.startswith("scheme,"):
                continue
            scheme, dt, err, w = line.split(",")
            rep = rows.setdefault(scheme, ConvergenceReport(
                scheme=scheme, dts=[], errors=[], wall_s=[],
                realizations=0, seed=0))
            rep.dts.append(float(dt))
            rep.errors.append(float(err))
            rep.wall_s.append(float(w))
    out = []
    for scheme, rep in rows.items():
        meta = footer.get(scheme, {})
        rep.realizations = int(meta.get("realizations", 0))
        rep.seed = int(meta.get("seed", 0))
        out.append(rep.finalize())
    return out


# ---------------------------------------------------------------------------
# phi benchmark

def run_phi_bench(grid_sizes, dts, seed: int = 0, tol: float = 1e-6,
                  krylov_m: int = 6, repeats: int = 3) -> list[dict]:
    """Time Krylov versus Leja phi actions on Neumann Laplacians.

    Deviations are measured against the dense oracle when the operator is
    small enough, against the other iterative method otherwise.
    """
    rows = []
    rng = np.random.default_rng(seed)
    kcfg = KrylovConfig(m=krylov_m, tol=tol)
    lcfg = LejaConfig(tol=tol)
    for n_side in grid_sizes:
        grid = build_grid(n_side, n_side, 1.0, 1.0)
        op, _ = assemble_diffusion(grid, 1.0)
        v = rng.standard_normal(grid.size)
        for dt in dts:
            results = {}
            for method, fn in (("krylov", lambda: krylov_phi_apply(op, v, dt, 0, kcfg)),
                               ("leja", lambda: leja_phi_apply(op, v, dt, 0, lcfg))):
                t0 = time.perf_counter()
                for _ in range(repeats):
                    w = fn()
                total = (time.perf_counter() - t0) / repeats
                results[method] = (w, total)
            if grid.size <= 1024:
                ref = dense_phi(dt * op.to_dense(), 0) @ v
                ref_name = "dense"
            else:
                ref = results["krylov"][0]
                ref_name = "cross"
            for method, (w, total) in results.items():
                dev = float(np.max(np.abs(w - ref)))
                rows.append({"method": method, "n": grid.size, "dt": dt,
                             "mean_wall_s": total, "max_dev": dev,
                             "reference": ref_name})
    return rows


def write_phi_bench_csv(rows: list[dict], path) -> None:
    lines = ["method,n,dt,mean_wall_s,max_dev,reference"]
    for r in rows:
        lines.append(f"{r['method']},{r['n']},{r['dt']:.10g},"
                     f"{r['mean_wall_s']:.6f},{_fmt(r['max_dev'])},"
                     f"{r['reference']}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
