"""File-based matplotlib renderings of sweep and single-run results."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .estimators import ideal_variance, naive_variance
from .harness import SweepResult
from .model import ModelParams, ParameterError
from .engine import RunResult


def render_sweep_figure(result: SweepResult, path: str | Path) -> None:
    """MSE versus SNR for the three estimators, with the closed-form naive
    and ideal variance curves overlaid."""
    snrs = sorted({r.snr_db for r in result.rows})
    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    styles = {"mde": ("o-", "tab:blue", "distributed detect-estimate"),
              "naive": ("s--", "tab:orange", "naive averaging"),
              "ideal": ("^-", "tab:green", "ideal (known defects)")}
    for est, (style, color, label) in styles.items():
        ys = [result.row(s, est).mse for s in snrs]
        ax.semilogy(snrs, ys, style, color=color, label=label, markersize=4)
    if result.config is not None:
        cfg = result.config
        grid = np.linspace(min(snrs), max(snrs), 200)
        theory_naive = [naive_variance(ModelParams(cfg.theta_for(s), cfg.sigma,
                                                   cfg.p1, cfg.n)) for s in grid]
        flat_ideal = ideal_variance(ModelParams(cfg.theta_for(0.0), cfg.sigma,
                                                cfg.p1, cfg.n))
        ax.semilogy(grid, theory_naive, ":", color="tab:orange", alpha=0.7,
                    label="naive variance (closed form)")
        ax.axhline(flat_ideal, ls=":", color="tab:green", alpha=0.7,
                   label="ideal variance (closed form)")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("MSE")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_convergence_figure(result: RunResult, path: str | Path) -> None:
    """Per-node estimate trajectories over the iterations of one run."""
    if result.trace is None:
        raise ParameterError("run was executed without record_trace")
    trace = result.trace
    t = trace[:, 0].astype(int)
    node = trace[:, 1].astype(int)
    selected = np.where(trace[:, 8] >= 0.0, trace[:, 2], trace[:, 3])
    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    for i in np.unique(node):
        mask = node == i
        ax.plot(t[mask], selected[mask], lw=0.7, alpha=0.6)
    ax.set_xlabel("iteration")
    ax.set_ylabel("local estimate")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
