"""Optional rendering of reports to image files.

Everything here is opt-in from the command line; the machine-readable
outputs never depend on it.  The Agg backend keeps rendering headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_process_plot", "save_residual_plot", "save_front_plot"]


def save_process_plot(proc, path: str, title: str = "") -> str:
    """State components and control components against time, two panels."""
    ts = np.linspace(0.0, proc.T, 501)
    xs = proc.state(ts)
    us = proc.control(ts)
    fig, (ax_x, ax_u) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    for i in range(xs.shape[1]):
        ax_x.plot(ts, xs[:, i], label=f"x[{i}]")
    ax_x.set_ylabel("state")
    ax_x.legend(loc="best", fontsize=8)
    ax_x.grid(True, alpha=0.3)
    for j in range(us.shape[1]):
        ax_u.plot(ts, us[:, j], label=f"u[{j}]")
    ax_u.set_xlabel("t")
    ax_u.set_ylabel("control")
    ax_u.legend(loc="best", fontsize=8)
    ax_u.grid(True, alpha=0.3)
    if title:
        ax_x.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_residual_plot(report, path: str, title: str = "") -> str:
    """Condition residuals as bars against their tolerances, log scale."""
    names = [r.name for r in report.results]
    res = np.array([max(r.residual, 1e-18) for r in report.results])
    tols = np.array([r.tol for r in report.results])
    colors = ["tab:green" if r.passed else "tab:red" for r in report.results]
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    pos = np.arange(len(names))
    ax.bar(pos, res, color=colors)
    ax.scatter(pos, tols, marker="_", s=500, color="black", label="tolerance")
    ax.set_yscale("log")
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("residual")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_front_plot(front, path: str) -> str:
    """Scatter of the first two objective components; dominated points and
    failures marked separately.  One-objective fronts fall back to a strip."""
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    if front.points:
        J = np.array([p.objectives for p in front.points])
        dom = np.array([p.dominated for p in front.points])
        if J.shape[1] == 1:
            J = np.column_stack([J[:, 0], np.zeros(len(J))])
        keep = ~dom
        ax.plot(J[keep, 0], J[keep, 1], "o-", color="tab:blue",
                label="front")
        if dom.any():
            ax.plot(J[dom, 0], J[dom, 1], "x", color="tab:red",
                    label="dominated")
    ax.set_xlabel("objective 0")
    ax.set_ylabel("objective 1")
    n_fail = len(front.failures)
    title = front.problem
    if n_fail:
        title += f" ({n_fail} failed weight{'s' if n_fail != 1 else ''})"
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
