"""Command-line entry points: converge, run, darcy, phi-bench.

Every flag mirrors a ``key = value`` line of an optional config file
(``--config``); flags given on the command line win.  Exit codes: 0 success,
2 configuration error, 3 numerical failure.
"""

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .experiments import (StudyConfig, build_problem,
                          run_convergence_study, run_phi_bench,
                          write_phi_bench_csv, write_reports_csv)
from .grid import Layout, build_grid
from .noise import Convention, NoiseKind, RngStream
from .operators import (darcy_solve, load_permeability_csv, peclet_number,
                        permeability_streaks)
from .schemes import PhiConfig, SchemeConfig, SchemeKind, integrate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    pass


def _parse_number(text: str) -> float:
    """Accept plain floats and fractions like 1/320."""
    return float(Fraction(text))


def _parse_ladder(text: str) -> tuple:
    try:
        vals = tuple(_parse_number(t) for t in text.split(",") if t.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad dt ladder {text!r}: {exc}") from exc
    if not vals or any(v <= 0 for v in vals):
        raise ConfigError(f"dt ladder must be positive values, got {text!r}")
    return vals


def _parse_schemes(text: str) -> tuple:
    out = []
    for name in text.split(","):
        name = name.strip()
        if not name:
            continue
        try:
            out.append(SchemeKind(name))
        except ValueError:
            raise ConfigError(
                f"unknown scheme {name!r}; choose from "
                f"{[k.value for k in SchemeKind]}") from None
    if not out:
        raise ConfigError("no schemes selected")
    return tuple(out)


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"grid must be 'nx,ny', got {text!r}") from None
    return nx, ny


def _parse_noise(text: str) -> dict:
    """power:r or expcov:b1,b2."""
    kind, _, rest = text.partition(":")
    if kind == "power":
        try:
            return {"noise_kind": NoiseKind.POWER_LAW,
                    "noise_r": float(rest or "1")}
        except ValueError:
            raise ConfigError(f"bad power-law exponent {rest!r}") from None
    if kind == "expcov":
        try:
            b1, b2 = (float(v) for v in rest.split(","))
        except ValueError:
            raise ConfigError(
                f"expcov noise needs 'expcov:b1,b2', got {text!r}") from None
        return {"noise_kind": NoiseKind.EXP_COVARIANCE,
                "noise_b1": b1, "noise_b2": b2}
    raise ConfigError(f"unknown noise spec {text!r} (power:r | expcov:b1,b2)")


def _parse_seed(text: str) -> int:
    try:
        return int(text, 0)  # decimal or 0x-prefixed hex
    except ValueError:
        raise ConfigError(f"seed must be a 64-bit integer, got {text!r}") from None


def load_config_file(path) -> dict:
    """Flat 'key = value' file, '#' comments; keys match the CLI flag names."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


_CONVERGE_KEYS = {
    "problem": str, "schemes": str, "dt_ladder": str, "realizations": int,
    "seed": str, "grid": str, "noise": str, "gamma": float, "phi": str,
    "out": str, "modes": int, "D": float, "reaction": float, "T": float,
    "phi_tol": float, "phi_krylov_m": int, "phi_leja_max_degree": int,
    "convention": str, "linear_solver": str, "ref_refine": int,
    "timing": str, "figures": str, "peclet": float, "background_k": float,
    "streak_k": float, "mu": float, "permeability_csv": str,
    "dirichlet_value": float,
}


def _merge_config(args: argparse.Namespace, keys: dict) -> dict:
    """File values first, CLI flags override; returns raw string/num values."""
    merged: dict = {}
    if getattr(args, "config", None):
        file_vals = load_config_file(args.config)
        for key, value in file_vals.items():
            if key not in keys:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = keys[key](value)
    for key, conv in keys.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _truthy(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).lower() in ("1", "true", "yes", "on")


def _study_config(values: dict) -> StudyConfig:
    cfg = StudyConfig()
    if "problem" in values:
        if values["problem"] not in ("linear", "advection"):
            raise ConfigError(f"unknown problem {values['problem']!r}")
        cfg.problem = values["problem"]
    if "schemes" in values:
        cfg.schemes = _parse_schemes(values["schemes"])
    if "dt_ladder" in values:
        cfg.dt_ladder = _parse_ladder(values["dt_ladder"])
    if "realizations" in values:
        cfg.realizations = int(values["realizations"])
        if cfg.realizations < 1:
            raise ConfigError("realizations must be >= 1")
    if "seed" in values:
        cfg.seed = _parse_seed(str(values["seed"]))
    if "grid" in values:
        cfg.nx, cfg.ny = _parse_grid(values["grid"])
    if "noise" in values:
        for key, val in _parse_noise(values["noise"]).items():
            setattr(cfg, key, val)
    for key in ("gamma", "D", "reaction", "T", "peclet", "background_k",
                "streak_k", "mu", "dirichlet_value"):
        if key in values:
            setattr(cfg, key, float(values[key]))
    for key in ("modes", "ref_refine"):
        if key in values:
            setattr(cfg, key, int(values[key]))
    if "permeability_csv" in values:
        cfg.permeability_csv = values["permeability_csv"]
    phi_method = values.get("phi", "auto")
    if phi_method not in ("auto", "krylov", "leja", "dense"):
        raise ConfigError(f"unknown phi method {phi_method!r}")
    cfg.phi = PhiConfig(method=phi_method,
                        tol=float(values.get("phi_tol", 1e-6)),
                        krylov_m=int(values.get("phi_krylov_m", 6)),
                        leja_max_degree=int(values.get("phi_leja_max_degree", 300)))
    if "convention" in values:
        try:
            cfg.convention = Convention(values["convention"])
        except ValueError:
            raise ConfigError(
                f"convention must be 'ito' or 'prefactor', got "
                f"{values['convention']!r}") from None
    if "linear_solver" in values:
        if values["linear_solver"] not in ("direct", "cg", "bicgstab"):
            raise ConfigError(f"unknown linear solver {values['linear_solver']!r}")
        cfg.linear_solver = values["linear_solver"]
    if "timing" in values:
        cfg.timing = _truthy(values["timing"])
    return cfg


def _cmd_converge(args) -> int:
    values = _merge_config(args, _CONVERGE_KEYS)
    cfg = _study_config(values)
    out = Path(values.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    reports = run_convergence_study(cfg)
    csv_path = out / "converge.csv"
    write_reports_csv(reports, csv_path)
    if _truthy(values.get("figures", True)):
        from .figures import convergence_figure

        convergence_figure(reports, out / "converge.png",
                           title=f"{cfg.problem} problem, seed {cfg.seed}")
    for rep in reports:
        order = "n/a (single rung)" if rep.order is None else f"{rep.order:.3f}"
        print(f"{rep.scheme}: fitted order {order}")
        for msg in rep.failures:
            print(f"  failure: {msg}", file=sys.stderr)
    print(f"wrote {csv_path}")
    if any(rep.failures for rep in reports):
        return EXIT_NUMERICAL
    return EXIT_OK


_RUN_KEYS = dict(_CONVERGE_KEYS)
_RUN_KEYS.update({"dt": str, "snapshots": str, "realization": int})


def _cmd_run(args) -> int:
    values = _merge_config(args, _RUN_KEYS)
    cfg = _study_config(values)
    dt = _parse_number(values.get("dt", "0.01"))
    if dt <= 0:
        raise ConfigError("dt must be positive")
    steps = round(cfg.T / dt)
    if abs(steps * dt - cfg.T) > 1e-9 * max(cfg.T, 1.0):
        raise ConfigError("T must be an integer multiple of dt")
    scheme_kind = cfg.schemes[0]
    realization = int(values.get("realization", 0))
    out = Path(values.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)

    problem, _ = build_problem(cfg)
    scfg = SchemeConfig(scheme_kind, dt, steps, cfg.phi, cfg.convention,
                        cfg.linear_solver)
    rng = RngStream(cfg.seed)
    snap_every = None
    if "snapshots" in values:
        n_snap = int(values["snapshots"])
        if n_snap > 0:
            snap_every = max(1, steps // n_snap)
    result = integrate(problem, scfg, realization, rng,
                       record_every=snap_every)
    fields = result if isinstance(result, list) else [result]
    for idx, field in enumerate(fields):
        t = (idx + 1) * (snap_every or steps) * dt
        t = min(t, cfg.T)
        path = out / f"state_t{t:.6f}.csv"
        np.savetxt(path, np.asarray(field).reshape(problem.grid.nx,
                                                   problem.grid.ny),
                   delimiter=",")
    if _truthy(values.get("figures", True)):
        from .figures import field_figure

        field_figure(problem.grid, fields[-1], out / "state_final.png",
                     title=f"{scheme_kind.value} at T={cfg.T:g}")
    print(f"wrote {len(fields)} snapshot(s) to {out}")
    return EXIT_OK


_DARCY_KEYS = {
    "grid": str, "out": str, "background_k": float, "streak_k": float,
    "mu": float, "p_left": float, "p_right": float, "permeability_csv": str,
    "figures": str, "D": float, "peclet": float, "darcy_tol": float,
}


def _cmd_darcy(args) -> int:
    values = _merge_config(args, _DARCY_KEYS)
    nx, ny = _parse_grid(values.get("grid", "41,41"))
    out = Path(values.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    grid = build_grid(nx, ny, 1.0, 1.0, Layout.CELL_CENTERED)
    if values.get("permeability_csv"):
        k = load_permeability_csv(values["permeability_csv"], grid)
    else:
        k = permeability_streaks(grid, float(values.get("background_k", 1.0)),
                                 float(values.get("streak_k", 100.0)))
    vel = darcy_solve(grid, k, float(values.get("mu", 1.0)),
                      float(values.get("p_left", 1.0)),
                      float(values.get("p_right", 0.0)))
    qx_c, qy_c = vel.cell_centered()
    X, Y = grid.meshgrid()
    table = np.column_stack([X.ravel(), Y.ravel(), qx_c.ravel(), qy_c.ravel()])
    np.savetxt(out / "velocity.csv", table, delimiter=",",
               header="x,y,qx,qy", comments="")
    div = vel.cell_divergence(grid)
    max_div = float(np.abs(div).max())
    qmax = vel.max_speed()
    tol = float(values.get("darcy_tol", 1e-10))
    pe_at = values.get("peclet")
    d_for_pe = float(values["D"]) if "D" in values else qmax / float(pe_at or 16.58)
    report = [
        f"max_abs_divergence,{max_div:.12e}",
        f"max_speed,{qmax:.12e}",
        f"relative_divergence,{max_div / qmax:.12e}",
        f"tolerance,{tol:.12e}",
        f"inflow,{float(vel.qx[0, :].sum() * grid.dy):.12e}",
        f"outflow,{float(vel.qx[-1, :].sum() * grid.dy):.12e}",
        f"peclet_at_D_{d_for_pe:.6g},{peclet_number(vel, grid.Lx, d_for_pe):.6f}",
    ]
    (out / "divergence.csv").write_text("\n".join(report) + "\n")
    if _truthy(values.get("figures", True)):
        from .figures import velocity_figure

        velocity_figure(grid, vel, out / "streamlines.png", permeability=k,
                        title="Darcy velocity")
    print(f"max |div q| = {max_div:.3e} ({max_div / qmax:.3e} of max speed)")
    print(f"wrote velocity field to {out}")
    if max_div > tol * qmax:
        print(f"divergence exceeds darcy_tol {tol:g}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


_BENCH_KEYS = {"sizes": str, "dt_ladder": str, "seed": str, "phi_tol": float,
               "phi_krylov_m": int, "out": str, "figures": str,
               "repeats": int}


def _cmd_phi_bench(args) -> int:
    values = _merge_config(args, _BENCH_KEYS)
    sizes = [int(s) for s in str(values.get("sizes", "10,20,30")).split(",")]
    dts = _parse_ladder(str(values.get("dt_ladder", "0.01,0.1")))
    out = Path(values.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    rows = run_phi_bench(sizes, dts, seed=_parse_seed(str(values.get("seed", 0))),
                         tol=float(values.get("phi_tol", 1e-6)),
                         krylov_m=int(values.get("phi_krylov_m", 6)),
                         repeats=int(values.get("repeats", 3)))
    write_phi_bench_csv(rows, out / "phi_bench.csv")
    if _truthy(values.get("figures", True)):
        from .figures import phi_bench_figure

        phi_bench_figure(rows, out / "phi_bench.png")
    worst = max(rows, key=lambda r: r["max_dev"])
    print(f"worst deviation {worst['max_dev']:.3e} "
          f"({worst['method']}, n={worst['n']}, dt={worst['dt']:g})")
    print(f"wrote {out / 'phi_bench.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setd",
        description="Stochastic exponential integrators for semilinear "
                    "parabolic SPDEs with additive spectral noise.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output directory (default .)")
        p.add_argument("--figures", help="render figures too (true/false)")

    conv = sub.add_parser("converge", help="strong convergence study")
    add_common(conv)
    conv.add_argument("--problem", choices=["linear", "advection"])
    conv.add_argument("--schemes", help="comma list, e.g. SETD1,SETD0,SemiImplicitStd")
    conv.add_argument("--dt-ladder", dest="dt_ladder",
                      help="comma list, fractions allowed (1/10,1/20,...)")
    conv.add_argument("--realizations", type=int)
    conv.add_argument("--seed", help="decimal or hex 64-bit seed")
    conv.add_argument("--grid", help="nx,ny")
    conv.add_argument("--noise", help="power:r | expcov:b1,b2")
    conv.add_argument("--gamma", type=float, help="noise amplitude Gamma")
    conv.add_argument("--phi", choices=["auto", "krylov", "leja", "dense"])
    conv.add_argument("--phi-tol", dest="phi_tol", type=float)
    conv.add_argument("--phi-krylov-m", dest="phi_krylov_m", type=int)
    conv.add_argument("--phi-leja-max-degree", dest="phi_leja_max_degree", type=int)
    conv.add_argument("--modes", type=int, help="spectral truncation N")
    conv.add_argument("-D", "--diffusion", dest="D", type=float)
    conv.add_argument("--reaction", type=float, help="linear reaction rate")
    conv.add_argument("-T", "--final-time", dest="T", type=float)
    conv.add_argument("--convention", choices=["ito", "prefactor"])
    conv.add_argument("--linear-solver", dest="linear_solver",
                      choices=["direct", "cg", "bicgstab"])
    conv.add_argument("--ref-refine", dest="ref_refine", type=int)
    conv.add_argument("--timing", help="record wall times (true/false)")
    conv.add_argument("--peclet", type=float)
    conv.add_argument("--background-k", dest="background_k", type=float)
    conv.add_argument("--streak-k", dest="streak_k", type=float)
    conv.add_argument("--mu", type=float)
    conv.add_argument("--permeability-csv", dest="permeability_csv")
    conv.add_argument("--dirichlet-value", dest="dirichlet_value", type=float)
    conv.set_defaults(func=_cmd_converge)

    run = sub.add_parser("run", help="single trajectory with snapshots")
    add_common(run)
    for flag in ("--problem", "--schemes", "--grid", "--noise", "--seed"):
        run.add_argument(flag)
    run.add_argument("--gamma", type=float)
    run.add_argument("--phi", choices=["auto", "krylov", "leja", "dense"])
    run.add_argument("--modes", type=int)
    run.add_argument("-D", "--diffusion", dest="D", type=float)
    run.add_argument("--reaction", type=float)
    run.add_argument("-T", "--final-time", dest="T", type=float)
    run.add_argument("--dt", help="time step (fraction allowed)")
    run.add_argument("--snapshots", help="number of snapshots to write")
    run.add_argument("--realization", type=int)
    run.set_defaults(func=_cmd_run)

    darcy = sub.add_parser("darcy", help="Darcy velocity field and divergence")
    add_common(darcy)
    darcy.add_argument("--grid", help="nx,ny")
    darcy.add_argument("--background-k", dest="background_k", type=float)
    darcy.add_argument("--streak-k", dest="streak_k", type=float)
    darcy.add_argument("--mu", type=float)
    darcy.add_argument("--p-left", dest="p_left", type=float)
    darcy.add_argument("--p-right", dest="p_right", type=float)
    darcy.add_argument("--permeability-csv", dest="permeability_csv")
    darcy.add_argument("-D", "--diffusion", dest="D", type=float)
    darcy.add_argument("--peclet", type=float)
    darcy.add_argument("--darcy-tol", dest="darcy_tol", type=float,
                       help="relative divergence tolerance (default 1e-10)")
    darcy.set_defaults(func=_cmd_darcy)

    bench = sub.add_parser("phi-bench", help="phi evaluator timing/accuracy")
    add_common(bench)
    bench.add_argument("--sizes", help="grid side lengths, e.g. 10,20,30")
    bench.add_argument("--dt-ladder", dest="dt_ladder")
    bench.add_argument("--seed")
    bench.add_argument("--phi-tol", dest="phi_tol", type=float)
    bench.add_argument("--phi-krylov-m", dest="phi_krylov_m", type=int)
    bench.add_argument("--repeats", type=int)
    bench.set_defaults(func=_cmd_phi_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
