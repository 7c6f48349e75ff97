"""PNG figures for simulation output.

Figures are drawn on bare :class:`matplotlib.figure.Figure` objects (no
pyplot state) and saved without a software tag so identical inputs give
identical bytes.
"""

from __future__ import annotations

import io

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from ._io import atomic_write_bytes

__all__ = ["error_figure", "normality_figure", "render_png", "write_png"]


def render_png(fig: Figure) -> bytes:
    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    return buf.getvalue()


def write_png(fig: Figure, path):
    return atomic_write_bytes(path, render_png(fig))


def error_figure(result) -> Figure:
    """Log-log medians of the max error and its two parts across the sweep."""
    x = np.asarray(result.sweep_values(), dtype=float)
    label = result.sweep_param or "N"
    fig = Figure(figsize=(5.0, 3.8))
    ax = fig.add_subplot(1, 1, 1)
    for metric, name in (("max_err", "max error"), ("first_order_max", "first order"),
                         ("remainder_max", "remainder")):
        y = result.median(metric)
        ok = np.isfinite(y) & (y > 0)
        if x.size > 1:
            ax.loglog(x[ok], y[ok], marker="o", label=name)
        else:
            ax.plot(x[ok], y[ok], marker="o", linestyle="none", label=name)
    ax.set_xlabel(label)
    ax.set_ylabel("median over replicates")
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def normality_figure(result) -> Figure:
    """Histogram of standardized errors per entry with the N(0, 1) density."""
    k = len(result.entries)
    fig = Figure(figsize=(3.2 * k, 3.0))
    grid = np.linspace(-4, 4, 201)
    density = np.exp(-0.5 * grid ** 2) / np.sqrt(2 * np.pi)
    for j, (s, t) in enumerate(result.entries):
        ax = fig.add_subplot(1, k, j + 1)
        z = result.z[:, j]
        z = z[np.isfinite(z)]
        if z.size:
            ax.hist(z, bins=30, range=(-4, 4), density=True, color="0.75")
        ax.plot(grid, density, color="k", linewidth=1.0)
        ax.set_title(f"entry ({s}, {t})")
    fig.tight_layout()
    return fig
