"""Figure rendering for simulation and certification outputs.

All figures are written straight to files (Agg backend); the CSVs remain
the primary data product and a gnuplot script referencing them is emitted
alongside, so the figures can be regenerated without this module.
"""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
})


def save_state_figure(traces, path):
    """Phase plot and state-norm decay of the closed-loop runs."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    for i, tr in enumerate(traces):
        ax1.plot(tr.x[:, 0], tr.x[:, 1], label=f"ic {i}")
        ax1.plot(tr.x[0, 0], tr.x[0, 1], "o", ms=3, color=ax1.lines[-1].get_color())
        ax2.semilogy(tr.t, np.linalg.norm(tr.x, axis=1))
    ax1.plot(0.0, 0.0, "k+", ms=8)
    ax1.set_xlabel("x1")
    ax1.set_ylabel("x2")
    ax1.set_title("closed-loop state trajectories")
    ax1.legend(loc="best", ncol=2)
    ax2.set_xlabel("t [s]")
    ax2.set_ylabel("||x||")
    ax2.set_title("state norm")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_metrics_figure(traces, path):
    """Error ratio, value-function rate and combined-function rate over time."""
    fig, axes = plt.subplots(3, 1, figsize=(7.2, 7.2), sharex=True)
    for i, tr in enumerate(traces):
        m = np.isfinite(tr.K_z)
        axes[0].plot(tr.t[m], tr.K_z[m], label=f"ic {i}")
        m = np.isfinite(tr.dV)
        axes[1].plot(tr.t[m], tr.dV[m])
        m = np.isfinite(tr.dVso)
        axes[2].plot(tr.t[m], tr.dVso[m])
    axes[0].axhline(1.0, color="k", lw=0.8, ls="--")
    axes[0].set_ylabel("K_z")
    axes[0].legend(loc="best", ncol=3)
    axes[1].axhline(0.0, color="k", lw=0.8, ls="--")
    axes[1].set_ylabel("dV/dt")
    axes[2].axhline(0.0, color="k", lw=0.8, ls="--")
    axes[2].set_ylabel("dV_so/dt")
    axes[2].set_xlabel("t [s]")
    axes[0].set_title("per-step metrics of the combined loop")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_lyapunov_figure(traces, path):
    """V, E and the combined function V_so on a log scale."""
    fig, axes = plt.subplots(3, 1, figsize=(7.2, 7.2), sharex=True)
    for i, tr in enumerate(traces):
        axes[0].semilogy(tr.t, np.maximum(tr.V, 1e-300), label=f"ic {i}")
        axes[1].semilogy(tr.t, np.maximum(tr.E, 1e-300))
        axes[2].semilogy(tr.t, np.maximum(tr.V_so, 1e-300))
    axes[0].set_ylabel("V(x)")
    axes[0].legend(loc="best", ncol=3)
    axes[1].set_ylabel("E = ||z - z_bar(x)||")
    axes[2].set_ylabel("V_so")
    axes[2].set_xlabel("t [s]")
    axes[0].set_title("value function, numerical error, combined function")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_condition_figure(bundle, path, T_max=None, n_pts: int = 400):
    """Stability-condition value as a function of the sampling time."""
    from .certify import stability_condition

    if T_max is None:
        T_max = min(0.999 / bundle.a_bar, 4.0 * bundle.T5) \
            if np.isfinite(bundle.T5) else 0.999 / bundle.a_bar
    Ts = np.linspace(T_max / n_pts, T_max, n_pts)
    vals = []
    for T in Ts:
        try:
            vals.append(stability_condition(bundle, T).condition_value)
        except (ValueError, AssertionError):
            vals.append(np.nan)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(Ts, vals)
    ax.axhline(0.0, color="k", lw=0.8)
    if np.isfinite(bundle.T5):
        ax.axvline(bundle.T5, color="tab:red", lw=0.8, ls="--",
                   label=f"T5 = {bundle.T5:.3g}")
        ax.legend(loc="best")
    ax.set_xlabel("sampling time T [s]")
    ax.set_ylabel("condition value")
    ax.set_title("sampling-time stability condition (negative = stable)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_gnuplot_script(csv_names, path, n_x: int = 2, n_u: int = 1):
    """Plot script for the trace CSVs, usable without this package."""
    c_x1, c_x2 = 3, 4  # k,t,x1,...
    c_vso = 2 + n_x + n_u + 3
    lines = [
        "# gnuplot script for the closed-loop trace CSVs",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set grid",
        "set terminal pngcairo size 900,600",
        "",
        "set output 'states_gp.png'",
        "set xlabel 'x1'",
        "set ylabel 'x2'",
        "plot " + ", \\\n     ".join(
            f"'{name}' using {c_x1}:{c_x2} with lines title 'ic {i}'"
            for i, name in enumerate(csv_names)),
        "",
        "set output 'vso_gp.png'",
        "set xlabel 't [s]'",
        "set ylabel 'V_so'",
        "set logscale y",
        "plot " + ", \\\n     ".join(
            f"'{name}' using 2:{c_vso} with lines title 'ic {i}'"
            for i, name in enumerate(csv_names)),
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def render_all(outdir, traces, bundle=None):
    """Standard figure set of a simulation run; returns written paths."""
    written = []
    p = os.path.join(outdir, "states.png")
    save_state_figure(traces, p)
    written.append(p)
    if any(np.any(np.isfinite(tr.V)) for tr in traces):
        p = os.path.join(outdir, "metrics.png")
        save_metrics_figure(traces, p)
        written.append(p)
        p = os.path.join(outdir, "lyapunov.png")
        save_lyapunov_figure(traces, p)
        written.append(p)
    if bundle is not None and np.isfinite(bundle.a_bar):
        p = os.path.join(outdir, "condition.png")
        save_condition_figure(bundle, p)
        written.append(p)
    return written
