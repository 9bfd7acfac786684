"""Report figures rendered with matplotlib's Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# keep PNG bytes independent of library version and time
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def scatter_true_pred(path, y_true, y_pred, label: str, unit: str, r2: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(y_true, y_pred, s=8, alpha=0.7)
    lo = float(min(np.min(y_true), np.min(y_pred)))
    hi = float(max(np.max(y_true), np.max(y_pred)))
    ax.plot([lo, hi], [lo, hi], color="black", linewidth=0.8)
    ax.set_xlabel(f"true {label} ({unit})")
    ax.set_ylabel(f"predicted {label} ({unit})")
    if r2 is not None:
        ax.set_title(f"{label}: R$^2$ = {r2:.3f}")
    fig.tight_layout()
    return _save(fig, path)


def loss_curves(path, histories: dict[str, tuple[list[float], list[float]]]) -> Path:
    """One panel per model with train and validation loss per epoch."""
    fig, axes = plt.subplots(1, len(histories), figsize=(4.0 * len(histories), 3.2), squeeze=False)
    for ax, (name, (tr, va)) in zip(axes[0], histories.items()):
        epochs = np.arange(1, len(tr) + 1)
        ax.plot(epochs, tr, label="train")
        ax.plot(epochs, va, label="val")
        ax.set_yscale("log")
        ax.set_title(name)
        ax.set_xlabel("epoch")
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def elevation_panel(path, rgb: np.ndarray, true_cm: np.ndarray, pred_cm: np.ndarray, title: str) -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    vmax = float(np.nanmax([np.nanmax(true_cm), np.nanmax(pred_cm), 1.0])) / 100.0
    axes[0].imshow(rgb)
    axes[0].set_title(title)
    for ax, img, name in ((axes[1], true_cm, "true (m)"), (axes[2], pred_cm, "predicted (m)")):
        im = ax.imshow(img / 100.0, vmin=0.0, vmax=vmax, cmap="viridis")
        ax.set_title(name)
        fig.colorbar(im, ax=ax, fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)


def embedding(path, coords: np.ndarray, values: np.ndarray, label: str, cmap: str = "viridis") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4.2))
    sc = ax.scatter(coords[:, 0], coords[:, 1], c=values, s=10, cmap=cmap)
    fig.colorbar(sc, ax=ax, label=label)
    ax.set_xlabel("MDS 1")
    ax.set_ylabel("MDS 2")
    fig.tight_layout()
    return _save(fig, path)
