"""Figures written next to the CSV/JSON reports (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .domain import Field  # noqa: E402

_STYLE = {
    "figure.figsize": (6.0, 3.8),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the PNG bytes stable across runs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _line_data(f):
    grid = f.grid
    vals = np.real(f.values)
    if grid.dim == 1:
        return grid.axis, vals
    mid = grid.N // 2
    return grid.axis, vals[:, mid]


def plot_groundstate(gs, path) -> Path:
    x, phi = _line_data(gs.phi)
    _, V = _line_data(Field(gs.phi.grid, gs.spec.potential.samples))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(x, phi, color="k", lw=1.4, label=r"$\varphi$")
        ax.set_xlabel("x" if gs.spec.dim == 1 else "x (slice y = 0)")
        ax.set_ylabel(r"$\varphi$")
        window = V <= V.min() + 4 * max(abs(gs.omega), 1.0) + 10
        ax2 = ax.twinx()
        ax2.plot(x[window], V[window], color="0.6", lw=0.8, ls="--")
        ax2.set_ylabel("V", color="0.4")
        ax.set_title(
            f"s={gs.spec.s:g}, p={gs.spec.p:g}, lambda={gs.spec.lam:g}, omega={gs.omega:.6g}"
        )
        fig.tight_layout()
        return _save(fig, path)


def plot_spectrum(reports, path) -> Path:
    """Eigenvalue ladder per (operator, sector), one column each."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        labels = []
        for j, rep in enumerate(reports):
            ev = np.asarray(rep.eigenvalues)
            ax.hlines(ev, j - 0.3, j + 0.3, color="k", lw=1.2)
            labels.append(f"{rep.operator}\n{rep.sector}")
        ax.axhline(0.0, color="0.6", lw=0.6, ls=":")
        ax.set_xticks(range(len(labels)), labels)
        ax.set_ylabel("eigenvalue")
        fig.tight_layout()
        return _save(fig, path)


def plot_eigenfields(report, path, count: int = 3) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for j, (mu, f) in enumerate(zip(report.eigenvalues[:count], report.eigenfields)):
            x, v = _line_data(f)
            ax.plot(x, v, lw=1.0, label=f"{mu:.6g}")
        ax.set_xlabel("x")
        ax.legend(title=f"{report.operator} ({report.sector})", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_distance(traces, path) -> Path:
    """Orbit distance d(t) / delta for one or more stability runs."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for tr in traces:
            scale = tr.delta if tr.delta > 0 else 1.0
            lab = f"delta={tr.delta:g}" if tr.delta > 0 else "delta=0 (absolute)"
            ax.plot(tr.times, tr.distance / scale, lw=1.0, label=lab)
        ax.set_xlabel("t")
        ax.set_ylabel(r"$d(t)/\delta$")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_conservation(times, e_drift, p_drift, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        floor = 1e-17
        ax.semilogy(times, np.maximum(e_drift, floor), label="energy", lw=1.0)
        ax.semilogy(times, np.maximum(p_drift, floor), label="power", lw=1.0)
        ax.set_xlabel("t")
        ax.set_ylabel("relative drift")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
