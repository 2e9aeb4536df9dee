"""Optional PNG figures next to the CSV artifacts.

matplotlib is imported lazily with the non-interactive Agg backend, so the
rest of the package never needs it. Install the ``plot`` extra to use these.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib: pip install 'timemixer[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    fig.clf()
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def plot_history(records, path) -> Path:
    """Train and validation loss per epoch."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = [r.epoch for r in records]
    ax.plot(epochs, [r.train_loss for r in records], marker="o", label="train")
    ax.plot(epochs, [r.val_loss for r in records], marker="s", label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    return _save(fig, path)


def plot_per_scale(history: np.ndarray, y_true: np.ndarray, per_scale: Sequence[np.ndarray],
                   channel: int, path) -> Path:
    """Input tail, ground truth and each scale's forecast for one channel.

    ``per_scale[m]`` is drawn scaled by the number of predictors so every
    curve sits on the same axis as the truth.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    p, f = history.shape[0], y_true.shape[0]
    ax.plot(np.arange(p), history[:, channel], color="0.5", label="input")
    future = np.arange(p, p + f)
    ax.plot(future, y_true[:, channel], color="k", label="truth")
    k = len(per_scale)
    for m, pred in enumerate(per_scale):
        ax.plot(future, k * pred[:, channel], label=f"scale {m} x{k}")
    ax.axvline(p - 0.5, color="0.8", linestyle="--")
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_heatmap(matrix: np.ndarray, title: str, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(matrix, cmap="RdBu_r", aspect="auto")
    ax.set_title(title, fontsize="small")
    ax.set_xlabel("input step")
    ax.set_ylabel("output step")
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_ablation(rows: Sequence[dict], metric: str, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    labels = [str(r["symbol"]) for r in rows]
    ax.bar(labels, [float(r[metric]) for r in rows], color="tab:blue")
    ax.set_ylabel(metric)
    ax.set_xlabel("case")
    return _save(fig, path)
