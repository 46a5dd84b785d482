"""Figure rendering for run reports.

Figures are written as SVG next to the CSV output and never feed back into
it.  Rendering is headless (Agg backend) and deterministic: the SVG hash
salt is pinned and the creation date stripped, so re-running a configuration
reproduces identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "sgdlab"

import matplotlib.pyplot as plt
import numpy as np

from .monitor import norm_error
from .stability import StabilitySeries, fit_rate

__all__ = ["save_figure", "stability_figure", "error_decay_figure", "consistency_figure", "render_all"]


def save_figure(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def stability_figure(series: StabilitySeries):
    """Log-log gap-versus-step-size profile with the fitted rate line."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.errorbar(series.gamma, series.beta_hat, yerr=series.ci_halfwidth,
                fmt="o", ms=4, lw=1, capsize=2, color="k", label="gap estimate")
    try:
        fit = fit_rate(series)
        order = np.argsort(series.gamma)
        g = series.gamma[order]
        line = fit.c_hat * g**fit.slope if abs(fit.slope - 1) < 1e-9 else np.exp(
            fit.slope * np.log(g) + (np.log(series.beta_hat[series.usable]).mean()
                                     - fit.slope * np.log(series.gamma[series.usable]).mean()))
        ax.plot(g, line, "k--", lw=1,
                label=f"slope {fit.slope:.2f}, r$^2$ {fit.r_squared:.3f}")
    except ValueError:
        pass
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"step size $\gamma_n$")
    ax.set_ylabel("one-step improvement gap")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    return fig


def error_decay_figure(trajectories, f_min):
    """Distance to the minimizer against the step count, one line per replicate."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    for traj in trajectories:
        steps = traj.recorded_steps
        errs = [norm_error(f, f_min) for f in traj.iterates]
        ax.plot(np.maximum(steps, 1), errs, lw=0.7, alpha=0.6)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("step $n$")
    ax.set_ylabel(r"$\|f_n - f_K\|$")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return fig


def consistency_figure(curve, epsilon):
    """Fraction of replicates with excess risk above epsilon, by step."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    steps = np.array([n for n, _ in curve])
    frac = np.array([v for _, v in curve])
    ax.plot(np.maximum(steps, 1), frac, "k-", lw=1)
    ax.set_xscale("log")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("step $n$")
    ax.set_ylabel(f"fraction with excess risk > {epsilon:g}")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return fig


def render_all(out_dir, series=None, trajectories=None, f_min=None, curve=None, epsilon=0.05) -> list[Path]:
    out = Path(out_dir)
    written = []
    if series is not None and series.steps.size:
        written.append(save_figure(stability_figure(series), out / "stability.svg"))
    if trajectories and f_min is not None:
        written.append(save_figure(error_decay_figure(trajectories, f_min), out / "error_decay.svg"))
    if curve:
        written.append(save_figure(consistency_figure(curve, epsilon), out / "consistency.svg"))
    return written
