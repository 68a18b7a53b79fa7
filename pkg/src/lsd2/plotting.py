"""Report figures written next to the CLI's JSON/CSV outputs."""
from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fileio import atomic_write_bytes  # noqa: E402


def _save(fig, path) -> Path:
    buf = io.BytesIO()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
    return Path(path)


def loss_curve(losses, path, title: str = "training loss") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = np.arange(len(losses))
    ax.plot(epochs, losses, marker="o" if len(losses) < 30 else None, lw=1.5)
    if len(losses) and min(losses) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean L2 loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def metric_bars(report, path) -> Path:
    """Per-image PSNR and SSIM with dashed lines at the dataset means."""
    names = [s.name for s in report.images]
    x = np.arange(len(names))
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(max(5, 0.25 * len(names) + 2), 5), sharex=True)
    a1.bar(x, [s.psnr_db for s in report.images], color="tab:blue")
    a1.axhline(report.mean_psnr_db, ls="--", color="k", lw=1)
    a1.set_ylabel("PSNR [dB]")
    a2.bar(x, [s.ssim for s in report.images], color="tab:orange")
    a2.axhline(report.mean_ssim, ls="--", color="k", lw=1)
    a2.set_ylabel("SSIM")
    a2.set_ylim(min(0.0, min((s.ssim for s in report.images), default=0.0)), 1.0)
    if len(names) <= 40:
        a2.set_xticks(x, names, rotation=90, fontsize=7)
    suffix = " (color matched)" if report.normalized else ""
    a1.set_title(f"{report.count} images{suffix}")
    fig.tight_layout()
    return _save(fig, path)


def psf_grid(field, path) -> Path:
    """Tile kernels laid out at their image positions, each on a common radius."""
    rows, cols = field.shape
    r = max(field.max_radius_used(), 1)
    fig, axes = plt.subplots(rows, cols, figsize=(1.1 * cols + 0.4, 1.1 * rows + 0.4), squeeze=False)
    for j in range(rows):
        for i in range(cols):
            ax = axes[j][i]
            k = field.grid[j][i].padded(r)
            ax.imshow(k / k.max(), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
    fig.suptitle(f"PSF field {cols}x{rows} tiles, radius {field.max_radius_used()} px", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
