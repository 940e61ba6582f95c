"""Matplotlib renderings for the artifact reports: loss curves, the blur
sweep surface, per-group metric bars, and small image grids."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch

LOSS_KEYS = ("L_r", "L_C", "L_D", "L_cy", "total")


def plot_loss_curves(log_path, out_path, smooth: int = 25):
    """Loss-per-step curves from the NDJSON loss log, lightly box-smoothed."""
    steps, series = [], {k: [] for k in LOSS_KEYS}
    for line in Path(log_path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        steps.append(rec["step"])
        for k in LOSS_KEYS:
            series[k].append(rec[k])
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for k in LOSS_KEYS:
        y = np.asarray(series[k], dtype=np.float64)
        if smooth > 1 and len(y) > smooth:
            kernel = np.ones(smooth) / smooth
            y = np.convolve(y, kernel, mode="valid")
            x = steps[smooth - 1 :]
        else:
            x = steps
        ax.plot(x, y, label=k, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def _grid_from_rows(rows, attr):
    ms = sorted({r.sigma_m for r in rows})
    gs = sorted({r.sigma_g for r in rows})
    z = np.full((len(ms), len(gs)), np.nan)
    for r in rows:
        z[ms.index(r.sigma_m), gs.index(r.sigma_g)] = getattr(r, attr)
    return ms, gs, z


def plot_sweep(rows, out_path):
    """Side-by-side heatmaps over (sigma_m, sigma_g): age MAE and the
    perceptual reconstruction distance."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, attr, title in zip(axes, ("age_mae", "recon"), ("Age MAE", "recon perceptual")):
        ms, gs, z = _grid_from_rows(rows, attr)
        im = ax.imshow(z, origin="lower", aspect="auto", cmap="viridis")
        ax.set_xticks(range(len(gs)), [f"{g:g}" for g in gs])
        ax.set_yticks(range(len(ms)), [f"{m:g}" for m in ms])
        ax.set_xlabel(r"$\sigma_g$")
        ax.set_ylabel(r"$\sigma_m$")
        ax.set_title(title)
        for i in range(len(ms)):
            for j in range(len(gs)):
                if np.isfinite(z[i, j]):
                    ax.text(j, i, f"{z[i, j]:.2f}", ha="center", va="center",
                            color="w", fontsize=7)
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def plot_group_metrics(report, out_path):
    names = [g.group for g in report.groups]
    x = np.arange(len(names))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.bar(x, [g.age_mae for g in report.groups], color="#4878cf")
    ax1.set_xticks(x, names)
    ax1.set_ylabel("corrected age MAE")
    ax2.bar(x, [g.kid for g in report.groups], color="#d65f5f")
    ax2.set_xticks(x, names)
    ax2.set_ylabel("KID")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3, axis="y")
    fig.suptitle("per-group translation metrics", fontsize=10)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def save_image_grid(images: torch.Tensor, out_path, captions=None, cols: int | None = None):
    """Dump a batch of [-1,1] images as one figure, optionally captioned."""
    n = images.shape[0]
    cols = cols or min(n, 8)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.8 * rows), squeeze=False)
    for i in range(rows * cols):
        ax = axes[i // cols][i % cols]
        ax.axis("off")
        if i >= n:
            continue
        arr = ((images[i].clamp(-1, 1) + 1) / 2).permute(1, 2, 0).cpu().numpy()
        ax.imshow(arr)
        if captions is not None:
            ax.set_title(str(captions[i]), fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)
