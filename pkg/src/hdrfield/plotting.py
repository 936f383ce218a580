"""Figure files for reports (matplotlib, non-interactive backend)."""
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def tonemap(e, gamma=2.2):
    """Exposure-normalized clip-and-gamma display of linear radiance."""
    e = np.maximum(np.asarray(e, np.float64), 0)
    med = float(np.median(e))
    scale = 0.5 / med if med > 0 else 1.0
    return np.clip(e * scale, 0, 1) ** (1 / gamma)


def comparison_figure(pred, ref, path):
    """Rendered panorama, reference and their log-radiance error side by side."""
    plt = _pyplot()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    err = np.abs(np.log1p(np.maximum(pred, 0)) - np.log1p(np.maximum(ref, 0))).mean(axis=-1)
    fig, axes = plt.subplots(3, 1, figsize=(6, 6.5))
    for ax, img, title in zip(axes, (tonemap(pred), tonemap(ref)), ("rendered", "reference")):
        ax.imshow(img)
        ax.set_title(title)
    im = axes[2].imshow(err, cmap="magma")
    axes[2].set_title("|log(1+e) error|")
    fig.colorbar(im, ax=axes[2], fraction=0.025)
    for ax in axes:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def loss_figure(reports, path):
    """Loss curve of a sequence of LossReports."""
    plt = _pyplot()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    it = [r.iteration for r in reports]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(it, [r.coarse for r in reports], label="coarse", lw=0.8)
    ax.semilogy(it, [r.fine for r in reports], label="fine", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def metric_bars(rows, column, path):
    """Bar chart of one metric column per view."""
    plt = _pyplot()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([f"{r['dataset']}:{r['view']}" for r in rows], [r[column] for r in rows])
    ax.set_ylabel(column)
    ax.tick_params(axis="x", rotation=60, labelsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
