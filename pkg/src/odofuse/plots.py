"""Figure rendering for reports: trajectory overlays, error curves, loss curves.

Everything renders through the Agg backend straight to files; the output format
follows the file extension (.svg for the overlay interface, .png also works).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .motion import Trajectory

_COLORS = ["tab:red", "tab:blue", "tab:green", "tab:orange", "tab:purple", "tab:brown"]


def trajectory_overlay(truth: Trajectory, estimates: dict, path) -> None:
    """Top-down overlay: truth in black, estimates colored, equal aspect,
    viewport fixed to the truth bounding box plus a 10% margin."""
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    ax.plot(truth.pos[:, 0], truth.pos[:, 1], color="black", lw=1.6, label="ground truth")
    ax.plot(truth.pos[0, 0], truth.pos[0, 1], marker="o", color="black", ms=6)
    for i, (name, traj) in enumerate(estimates.items()):
        pos = traj.pos if isinstance(traj, Trajectory) else np.asarray(traj)
        ax.plot(pos[:, 0], pos[:, 1], color=_COLORS[i % len(_COLORS)], lw=1.1, label=name)
    lo = truth.pos[:, :2].min(axis=0)
    hi = truth.pos[:, :2].max(axis=0)
    span = np.maximum(hi - lo, 1.0)
    ax.set_xlim(lo[0] - 0.1 * span[0], hi[0] + 0.1 * span[0])
    ax.set_ylim(lo[1] - 0.1 * span[1], hi[1] + 0.1 * span[1])
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def error_curves(t: np.ndarray, curves: dict, path, ylabel: str = "error") -> None:
    """Per-sample error traces over time for one or more estimators."""
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    for i, (name, values) in enumerate(curves.items()):
        ax.plot(t, values, color=_COLORS[i % len(_COLORS)], lw=1.0, label=name)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def loss_curve(history: list, path) -> None:
    """Training-loss trace from a train_* history list."""
    losses = [h["loss"] for h in history]
    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    ax.plot(range(len(losses)), losses, lw=1.2)
    stages = [h.get("stage") for h in history]
    if any(s is not None for s in stages):
        bounds = [i for i in range(1, len(stages)) if stages[i] != stages[i - 1]]
        for b in bounds:
            ax.axvline(b - 0.5, color="gray", lw=0.6, ls="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
