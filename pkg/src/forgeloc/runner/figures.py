"""Report figures: ROC curve, score histogram and a strip of mask overlays."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..forgebench.dataset import Split  # noqa: E402
from .evaluate import Predictions  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """False- and true-positive rates at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]  # final index of each tie group
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / max(y.sum(), 1)]
    fpr = np.r_[0.0, fp / max((~y).sum(), 1)]
    return fpr, tpr


def plot_roc(pred: Predictions, data: Split, path: Path, auc_value: float) -> Path:
    fpr, tpr = roc_points(pred.scores, data.labels)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.0))
        ax.plot(fpr, tpr, color="k", lw=1.2, label=f"AUC {auc_value:.3f}")
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_score_histogram(pred: Predictions, data: Split, path: Path) -> Path:
    bins = np.linspace(0, 1, 26)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        ax.hist(pred.scores[~data.labels.astype(bool)], bins=bins, color="tab:blue", alpha=0.7, label="authentic")
        ax.hist(pred.scores[data.labels.astype(bool)], bins=bins, color="tab:red", alpha=0.7, label="forged")
        ax.set_xlabel("fused forgery probability")
        ax.set_ylabel("images")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_mask_overlays(pred: Predictions, data: Split, path: Path, count: int = 6) -> Path:
    """Top row images, middle ground truth, bottom predicted mask, for the first forged samples."""
    idx = np.flatnonzero(data.labels)[:count]
    if idx.size == 0:
        idx = np.arange(min(count, len(data)))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, idx.size, figsize=(1.3 * idx.size, 4.0), squeeze=False)
        for col, i in enumerate(idx):
            img = data.images[i].permute(1, 2, 0).numpy()
            axes[0, col].imshow(np.clip(img, 0, 1))
            axes[1, col].imshow(data.masks[i], cmap="gray", vmin=0, vmax=1)
            axes[2, col].imshow(pred.score_maps[i], cmap="magma", vmin=0, vmax=1)
            axes[2, col].contour(pred.masks[i], levels=[0.5], colors="c", linewidths=0.6)
            axes[0, col].set_title(data.ids[i], fontsize=7)
        for ax, name in zip(axes[:, 0], ("image", "truth", "score")):
            ax.set_ylabel(name)
        for ax in axes.flat:
            ax.set_xticks([])
            ax.set_yticks([])
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def render_report_figures(pred: Predictions, data: Split, report_path: Path, auc_value: float) -> list[Path]:
    """Write the three figures next to ``report_path`` and return their paths."""
    report_path = Path(report_path)
    stem = report_path.with_suffix("")
    return [
        plot_roc(pred, data, Path(f"{stem}_roc.png"), auc_value),
        plot_score_histogram(pred, data, Path(f"{stem}_scores.png")),
        plot_mask_overlays(pred, data, Path(f"{stem}_masks.png")),
    ]
