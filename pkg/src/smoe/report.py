"""Report figures rendered alongside the delimited metric output."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import ImageGrid

__all__ = ["save_comparison_figure", "save_loss_figure"]


def save_comparison_figure(path, recon: ImageGrid, original: ImageGrid | None = None,
                           metrics: dict | None = None, title: str = "reconstruction"):
    """Side-by-side original / reconstruction / absolute-error panel."""
    metrics = metrics or {}
    caption = "  ".join(f"{k}={v}" for k, v in metrics.items())
    if original is not None:
        fig, axes = plt.subplots(1, 3, figsize=(12, 4.4))
        axes[0].imshow(original.pixels, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        axes[0].set_title("original")
        axes[1].imshow(recon.pixels, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        axes[1].set_title(title)
        err = np.abs(recon.pixels - original.pixels)
        im = axes[2].imshow(err, cmap="magma", vmin=0, vmax=max(err.max(), 1e-3))
        axes[2].set_title("abs error")
        fig.colorbar(im, ax=axes[2], fraction=0.046)
    else:
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(recon.pixels, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(title)
        axes = [ax]
    for ax in np.atleast_1d(axes):
        ax.set_xticks([])
        ax.set_yticks([])
    if caption:
        fig.suptitle(caption, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_loss_figure(path, traces: np.ndarray, iterations: int):
    """Convergence curves for a batch of fitted blocks (decimated loss traces)."""
    traces = np.asarray(traces, dtype=np.float64)
    if traces.ndim == 1:
        traces = traces[None]
    n_pts = traces.shape[1]
    xs = np.linspace(0, iterations, n_pts)
    fig, ax = plt.subplots(figsize=(6, 4))
    mean = traces.mean(axis=0)
    ax.plot(xs, mean, color="tab:blue", label="mean block loss")
    if traces.shape[0] > 1:
        lo = np.percentile(traces, 10, axis=0)
        hi = np.percentile(traces, 90, axis=0)
        ax.fill_between(xs, lo, hi, color="tab:blue", alpha=0.25, label="10-90 percentile")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("block MSE")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
