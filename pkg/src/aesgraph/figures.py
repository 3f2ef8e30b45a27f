"""Matplotlib renderings saved next to the delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(stats, path) -> None:
    """Loss and train accuracy against epoch, one PNG."""
    epochs = [s.epoch for s in stats]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(epochs, [s.loss for s in stats], color="tab:red", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(epochs, [s.accuracy for s in stats], color="tab:blue", label="train accuracy")
    ax2.set_ylabel("train accuracy", color="tab:blue")
    ax2.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_chart(rows, path) -> None:
    """Grouped accuracy/AP bars per architecture variant."""
    variants = [r["variant"] for r in rows]
    xs = np.arange(len(variants))
    fig, ax = plt.subplots(figsize=(7.0, 3.8))
    ax.bar(xs - 0.18, [r["accuracy"] for r in rows], width=0.36, label="accuracy")
    ax.bar(xs + 0.18, [r["ap"] for r in rows], width=0.36, label="AP")
    ax.set_xticks(xs)
    ax.set_xticklabels(variants, rotation=20)
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_heatmap_figure(matrix: np.ndarray, query: tuple[int, int], path) -> None:
    """Region-similarity heatmap with the query cell marked."""
    fig, ax = plt.subplots(figsize=(4.4, 4.0))
    im = ax.imshow(matrix, vmin=-1.0, vmax=1.0, cmap="magma")
    ax.scatter([query[1]], [query[0]], marker="s", s=60,
               facecolors="none", edgecolors="cyan")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
