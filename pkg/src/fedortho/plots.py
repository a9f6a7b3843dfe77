"""Figure rendering for run reports (accuracy grid, curves, subspace use)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_figures"]


def render_figures(result, out_dir) -> list:
    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    written = []
    k = result.acc_matrix.shape[0]

    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(result.acc_matrix, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xlabel("after task")
    ax.set_ylabel("evaluated task")
    ax.set_xticks(range(k), [str(t + 1) for t in range(k)])
    ax.set_yticks(range(k), [str(t + 1) for t in range(k)])
    for i in range(k):
        for t in range(i, k):
            ax.text(
                t, i, f"{result.acc_matrix[i, t]:.2f}",
                ha="center", va="center", color="white", fontsize=8,
            )
    fig.colorbar(im, ax=ax, label="accuracy")
    ax.set_title(f"{result.cfg.method}: accuracy grid")
    path = os.path.join(fig_dir, "accuracy_matrix.png")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for i in range(k):
        xs = np.arange(i + 1, k + 1)
        ax.plot(xs, result.acc_matrix[i, i:], marker="o", label=f"task {i + 1}")
    ax.set_xlabel("after task")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.set_xticks(range(1, k + 1))
    ax.legend(fontsize=8)
    ax.set_title(f"{result.cfg.method}: per-task accuracy over time")
    path = os.path.join(fig_dir, "accuracy_curves.png")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    if result.subspace and any(row[2] > 0 for row in result.subspace):
        layers = sorted({row[1] for row in result.subspace})
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for l in layers:
            rows = [r for r in result.subspace if r[1] == l]
            ax.plot(
                [r[0] for r in rows],
                [r[4] for r in rows],
                marker="s",
                label=f"layer {l}",
            )
        ax.set_xlabel("task")
        ax.set_ylabel("basis size / dimension")
        ax.set_ylim(0, 1)
        ax.set_xticks(range(1, k + 1))
        ax.legend(fontsize=8)
        ax.set_title("subspace utilization")
        path = os.path.join(fig_dir, "subspace_utilization.png")
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
