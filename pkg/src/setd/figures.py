"""Matplotlib rendering of study reports next to their CSV files.

All figures go straight to disk (Agg backend); the CSV stays the canonical
data artifact and every plot here is derivable from it.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import Grid
from .operators import VelocityField

_MARKERS = ("o", "s", "^", "d", "v", "*")


def convergence_figure(reports, path, title: str = "") -> None:
    """Log-log RMS error against dt, one line per scheme, orders in legend."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for mk, rep in zip(_MARKERS, reports):
        dts = np.array(rep.dts)
        errs = np.array(rep.errors)
        ok = np.isfinite(errs) & (errs > 0)
        label = rep.scheme
        if rep.order is not None:
            label += f" (order {rep.order:.2f})"
        ax.loglog(dts[ok], errs[ok], marker=mk, label=label)
    if reports and len(reports[0].dts) >= 2:
        dts = np.array(reports[0].dts)
        finite = [e for rep in reports for e in rep.errors
                  if np.isfinite(e) and e > 0]
        if finite:
            anchor = min(finite)
            ax.loglog(dts, anchor * (dts / dts.min()), "k--", lw=0.8,
                      label="slope 1")
    ax.set_xlabel(r"$\Delta t$")
    ax.set_ylabel(r"RMS $L^2$ error at $T$")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def field_figure(grid: Grid, field, path, title: str = "") -> None:
    """Heatmap of a grid field."""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    X, Y = grid.meshgrid()
    data = np.asarray(field).reshape(grid.nx, grid.ny)
    pcm = ax.pcolormesh(X, Y, data, shading="auto", cmap="viridis")
    fig.colorbar(pcm, ax=ax)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def velocity_figure(grid: Grid, vel: VelocityField, path,
                    permeability=None, title: str = "") -> None:
    """Streamlines of the Darcy velocity, optionally over the permeability."""
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    qx, qy = vel.cell_centered()
    x = grid.x_coords()
    y = grid.y_coords()
    if permeability is not None:
        X, Y = grid.meshgrid()
        pcm = ax.pcolormesh(X, Y, np.asarray(permeability), shading="auto",
                            cmap="Greys", alpha=0.5)
        fig.colorbar(pcm, ax=ax, label="permeability")
    # streamplot wants (ny, nx)-shaped arrays on an (x, y) meshgrid
    ax.streamplot(x, y, qx.T, qy.T, density=1.2, color="tab:blue", linewidth=0.8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def phi_bench_figure(rows, path) -> None:
    """Mean wall time per method against operator size."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    methods = sorted({r["method"] for r in rows})
    for mk, method in zip(_MARKERS, methods):
        pts = sorted((r["n"], r["mean_wall_s"]) for r in rows
                     if r["method"] == method)
        sizes = sorted({n for n, _ in pts})
        means = [float(np.mean([w for n, w in pts if n == s])) for s in sizes]
        ax.loglog(sizes, means, marker=mk, label=method)
    ax.set_xlabel("operator size n")
    ax.set_ylabel("mean wall time per apply [s]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
