"""Matplotlib figures written next to the CSV output (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.0,
    "figure.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_invariants(path, series) -> Path:
    steps = series.array("step")
    names = [("pi", r"$\Pi$"), ("z", "$Z$"), ("energy", "$E$")]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 2.8))
        for ax, (name, label) in zip(axes, names):
            values = series.array(name)
            if len(values) == len(steps) and len(values):
                ax.plot(steps, values - values[0])
            ax.set_xlabel("step")
            ax.set_ylabel(label + " (change)")
        return _save(fig, path)


def plot_rolling_casimirs(path, fluid, gibbs) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        for ax, name, label in zip(axes, ("c3", "c4"), (r"$\langle C_3\rangle$", r"$\langle C_4\rangle$")):
            ax.plot(fluid.array("step"), fluid.rolling(name), label="fluid")
            ax.plot(np.arange(len(gibbs)), gibbs.rolling(name), label="Gibbs", ls="--")
            ax.set_xlabel("step / sample")
            ax.set_ylabel(label)
            ax.legend()
        return _save(fig, path)


def _triangulation(mesh):
    lat, lon = mesh.latlon
    return mtri.Triangulation(np.degrees(lon), np.degrees(lat))


def plot_field_pair(path, mesh, left, right, titles) -> Path:
    tri = _triangulation(mesh)
    lo = min(np.min(left), np.min(right))
    hi = max(np.max(left), np.max(right))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3), sharey=True)
        for ax, values, title in zip(axes, (left, right), titles):
            art = ax.tripcolor(tri, values, shading="gouraud", vmin=lo, vmax=hi)
            ax.set_title(title)
            ax.set_xlabel("longitude (deg)")
        axes[0].set_ylabel("latitude (deg)")
        fig.colorbar(art, ax=axes, shrink=0.9)
        path = Path(path)
        fig.savefig(path)
        plt.close(fig)
        return path


def plot_mixing(path, rows) -> Path:
    rows = [r for r in rows if np.isfinite(r[1])]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot([r[1] for r in rows], [r[2] for r in rows], "o-")
        for F, x, y in rows:
            ax.annotate(f"F={F:g}", (x, y), textcoords="offset points", xytext=(4, 4))
        ax.set_xlabel(r"$1/\sqrt{F}$")
        ax.set_ylabel(r"$|\langle C_4(q^T)\rangle - C_4(q^0)|$")
        return _save(fig, path)


def plot_histograms(path, hists) -> Path:
    """``hists`` maps refinement to ``((edges_Pi, counts_Pi), (edges_Z, counts_Z))``."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        for r, pair in sorted(hists.items()):
            for ax, (edges, counts) in zip(axes, pair):
                width = np.diff(edges)
                density = counts / (counts.sum() * width)
                ax.step(edges[:-1], density, where="post", label=f"r={r}")
        axes[0].set_xlabel(r"$\Pi / \sqrt{\langle Z\rangle}$")
        axes[1].set_xlabel(r"$Z / \langle Z\rangle$")
        for ax in axes:
            ax.set_ylabel("density")
            ax.legend()
        return _save(fig, path)


def plot_convergence(path, rows) -> Path:
    h = np.array([r[1] for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.loglog(h, [r[2] for r in rows], "o-", label=r"std $\Pi$")
        ax.loglog(h, [r[3] for r in rows], "s-", label="std $Z$")
        ax.set_xlabel("mean edge length $h$")
        ax.set_ylabel("normalised standard deviation")
        ax.legend()
        return _save(fig, path)
