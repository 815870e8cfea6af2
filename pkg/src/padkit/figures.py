"""Matplotlib renderings for the report path.

PNG figures are written next to the delimited outputs (ROC CSV/SVG and
the metrics CSV). Importing this module selects the Agg backend, so it is
kept out of the core import path and pulled in only by the CLI.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import RocCurve
from .neural_net import EpochMetrics


def save_roc_png(curve: RocCurve, path: str | Path, title: str = "ROC") -> None:
    fig, ax = plt.subplots(figsize=(4.2, 4.2), dpi=150)
    fpr = [p.fpr for p in curve.points]
    tpr = [p.tpr for p in curve.points]
    ax.plot(fpr, tpr, color="black", lw=1.5, label=f"AUC = {curve.auc:.4f}")
    ax.plot([0, 1], [0, 1], color="gray", ls="--", lw=1.0, label="chance")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_training_curves_png(metrics: Sequence[EpochMetrics], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.4, 3.6), dpi=150)
    epochs = [m.epoch for m in metrics]
    ax.plot(epochs, [m.train_loss for m in metrics], color="black", lw=1.2, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss")
    ax.grid(alpha=0.3)
    handles, labels = ax.get_legend_handles_labels()
    if any(m.val_accuracy is not None for m in metrics):
        ax2 = ax.twinx()
        ax2.plot(
            epochs,
            [m.val_accuracy for m in metrics],
            color="tab:blue",
            lw=1.2,
            label="val accuracy",
        )
        ax2.set_ylabel("validation accuracy")
        ax2.set_ylim(0.0, 1.05)
        h2, l2 = ax2.get_legend_handles_labels()
        handles += h2
        labels += l2
    ax.legend(handles, labels, loc="center right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
