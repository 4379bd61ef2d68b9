"""Figures written next to the CSV outputs (matplotlib, headless backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_bin_curves(curves: dict, path, c_max: float | None = None, title: str = "") -> None:
    """Per-bin MAE against sub-region GT count, one line per method.

    ``curves`` maps a label to a list of BinRow; empty bins are skipped.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in curves.items():
        xs = [r.low for r in rows if r.n > 0]
        ys = [r.mae for r in rows if r.n > 0]
        ax.plot(xs, ys, marker="o", ms=3, label=label)
    if c_max is not None:
        ax.axvline(c_max, color="grey", ls="--", lw=1, label=f"C_max = {c_max:g}")
    ax.set_xlabel("ground-truth count of 64x64 sub-region")
    ax.set_ylabel("MAE")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_masks(image: np.ndarray, masks: list, path, title: str = "") -> None:
    """The input image next to each division mask W_i (values in [0, 1])."""
    n = 1 + len(masks)
    fig, axes = plt.subplots(1, n, figsize=(3 * n, 3))
    axes = np.atleast_1d(axes)
    axes[0].imshow(image, cmap="gray", vmin=0, vmax=1)
    axes[0].set_title(title or "image")
    for i, (ax, m) in enumerate(zip(axes[1:], masks), start=1):
        ax.imshow(m.values, cmap="viridis", vmin=0, vmax=1)
        ax.set_title(f"W_{i}")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_loss(history: list, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([h["epoch"] for h in history], [h["loss"] for h in history])
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean train loss")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
