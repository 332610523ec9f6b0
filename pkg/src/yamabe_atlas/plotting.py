"""Report figures written next to the CSV/JSON outputs.

Every function takes the data plus an output path and writes one PNG.
The Agg backend is used so no display is needed.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}
PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def plot_trace(trace, path):
    """Volume, mean curvature, curvature range and u range against time."""
    t = trace.column("t")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, sharex=True, figsize=(8.0, 5.5))
        V = trace.column("V")
        axes[0, 0].plot(t, (V - V[0]) / V[0])
        axes[0, 0].set_ylabel("relative volume drift")
        axes[0, 1].plot(t, trace.column("s_g"))
        axes[0, 1].set_ylabel("$s_g$")
        axes[1, 0].plot(t, trace.column("Rmin"), label="min $R_g$")
        axes[1, 0].plot(t, trace.column("Rmax"), label="max $R_g$")
        axes[1, 0].legend()
        axes[1, 1].plot(t, trace.column("umin"), label="inf u")
        axes[1, 1].plot(t, trace.column("umax"), label="sup u")
        axes[1, 1].legend()
        for ax in axes[1]:
            ax.set_xlabel("t")
        fig.suptitle(f"flow trace ({trace.status})")
        return _save(fig, path)


def plot_chart_slice(atlas, arrays, path, title="", labels=None):
    """Central slice (last axes fixed at the middle) of per-chart arrays."""
    arrays = arrays if isinstance(arrays[0], (list, tuple)) else [arrays]
    labels = labels or [None] * len(arrays)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for family, label in zip(arrays, labels):
            for chart, arr in zip(atlas.charts, family):
                mid = tuple(n // 2 for n in chart.grid_shape[1:])
                ax.plot(chart.axes[0], arr[(slice(None),) + mid],
                        label=f"{label} chart {chart.id}" if label else f"chart {chart.id}")
        ax.set_xlabel("$x^1$ (chart coordinate)")
        ax.set_title(title)
        if len(atlas.charts) * len(arrays) <= 8:
            ax.legend()
        return _save(fig, path)


def plot_spectrum(eigenvalues, path, title="spectrum of $A_h$"):
    eig = np.asarray(eigenvalues)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter(eig.real, eig.imag, s=6)
        ax.axvline(0.0, color="k", lw=0.8)
        ax.set_xlabel("Re")
        ax.set_ylabel("Im")
        ax.set_title(title)
        return _save(fig, path)


def plot_resolvent(report, path):
    lam = np.abs(np.asarray(report.lambdas, dtype=complex))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.loglog(lam, report.bounds, "o-", label=r"$(1+|\lambda|)\,\|(\lambda+A_h)^{-1}\|$")
        ax.set_xlabel(r"$|\lambda|$")
        ax.legend()
        return _save(fig, path)


def plot_modulus(table, path, s):
    d, v = np.array(table).T
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keep = v > 0
        ax.loglog(d[keep], v[keep], "o-", label=r"$[u]^{\delta}$")
        if np.any(keep):
            ref = v[keep][0] * (d[keep] / d[keep][0]) ** (1.0 - (s - np.floor(s)))
            ax.loglog(d[keep], ref, "--", label=r"slope $1-s$")
        ax.set_xlabel(r"$\delta$")
        ax.legend()
        return _save(fig, path)


def plot_probe(report, path):
    """Successive difference norms against the step for every order and axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        seen = set()
        for row in report.rows:
            key = (row["order"], row["axis"])
            if key in seen or row["base"] != 0:
                continue
            seen.add(key)
            pts = [(r["delta"], r["difference_norm"]) for r in report.rows
                   if r["order"] == row["order"] and r["axis"] == row["axis"] and r["base"] == 0]
            d, e = np.array(pts).T
            if np.all(e > 0):
                ax.loglog(d, e, "o-", label=f"order {row['order']}, axis {row['axis']}")
        ax.set_xlabel(r"$\delta$")
        ax.set_ylabel("difference norm")
        ax.legend(ncol=2)
        return _save(fig, path)
