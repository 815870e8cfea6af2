"""Accuracy, confusion matrices, ROC curves, and AUC.

The positive class is "real" (acceptance semantics): TPR is the fraction
of genuine samples accepted, FPR the fraction of attacks mistakenly
accepted. ROC thresholds sweep the distinct score set plus +inf,
predicting positive at score >= threshold; AUC is the trapezoidal area,
which equals the Mann-Whitney pair statistic with half credit for ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

POSITIVE_LABEL = "real"


@dataclass(frozen=True)
class ScoredSample:
    """A true label with either a probability of 'real' (binary) or a
    probability vector (multiclass)."""

    label: str
    score: float | np.ndarray

    def __post_init__(self) -> None:
        score = self.score
        if np.ndim(score) == 0:
            value = float(score)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"binary score must lie in [0, 1], got {value}")
        else:
            vec = np.asarray(score, dtype=np.float64)
            if abs(float(vec.sum()) - 1.0) > 1e-9:
                raise ValueError("multiclass score vector must sum to 1 within 1e-9")
            object.__setattr__(self, "score", vec)


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    auc: float


def _unpack(samples: Iterable) -> tuple[np.ndarray, list[str]]:
    scores = []
    labels = []
    for sample in samples:
        if isinstance(sample, ScoredSample):
            labels.append(sample.label)
            scores.append(float(sample.score))
        else:
            label, score = sample
            labels.append(label)
            scores.append(float(score))
    return np.asarray(scores, dtype=np.float64), labels


def accuracy(predictions: Sequence[tuple[str, str]]) -> float:
    """Fraction of (true, predicted) pairs that agree."""
    if not predictions:
        raise ValueError("accuracy of an empty prediction list is undefined")
    correct = sum(1 for true, pred in predictions if true == pred)
    return correct / len(predictions)


def confusion_matrix(
    predictions: Sequence[tuple[str, str]], class_order: Sequence[str]
) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    index = {label: i for i, label in enumerate(class_order)}
    matrix = np.zeros((len(class_order), len(class_order)), dtype=np.int64)
    for true, pred in predictions:
        matrix[index[true], index[pred]] += 1
    return matrix


def roc_curve(samples: Iterable, positive_label: str = POSITIVE_LABEL) -> RocCurve:
    """Threshold sweep over the distinct scores plus +inf.

    samples are ScoredSample instances or (label, score) pairs; both
    classes must be present.
    """
    scores, labels = _unpack(samples)
    positive = np.array([label == positive_label for label in labels])
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present in the sample set")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positive[order]
    tp_cum = np.cumsum(sorted_pos)
    fp_cum = np.cumsum(~sorted_pos)
    # last index of each tie group marks one threshold point
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    last = np.concatenate([boundary, [len(sorted_scores) - 1]])

    points = [RocPoint(float("inf"), 0.0, 0.0)]
    for i in last:
        points.append(
            RocPoint(
                float(sorted_scores[i]),
                float(fp_cum[i]) / n_neg,
                float(tp_cum[i]) / n_pos,
            )
        )
    auc = 0.0
    for a, b in zip(points, points[1:]):
        auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return RocCurve(tuple(points), auc)


def auc_pair_oracle(samples: Iterable, positive_label: str = POSITIVE_LABEL) -> float:
    """Mann-Whitney statistic: correctly ordered real/fake pairs, ties half."""
    scores, labels = _unpack(samples)
    positive = np.array([label == positive_label for label in labels])
    pos_scores = scores[positive]
    neg_scores = scores[~positive]
    if pos_scores.size == 0 or neg_scores.size == 0:
        raise ValueError("pair oracle needs both classes present")
    wins = np.sum(pos_scores[:, None] > neg_scores[None, :])
    ties = np.sum(pos_scores[:, None] == neg_scores[None, :])
    return float((wins + 0.5 * ties) / (pos_scores.size * neg_scores.size))


def roc_csv(curve: RocCurve) -> str:
    """CSV table with columns threshold,fpr,tpr at 9 significant digits."""
    lines = ["threshold,fpr,tpr"]
    for p in curve.points:
        lines.append(f"{p.threshold:.9g},{p.fpr:.9g},{p.tpr:.9g}")
    return "\n".join(lines) + "\n"


def roc_svg(curve: RocCurve, size: int = 420, margin: int = 45) -> str:
    """Standalone SVG: TPR vs FPR polyline on a unit square with the chance
    diagonal; the AUC is printed in the legend."""
    span = size - 2 * margin

    def sx(fpr: float) -> float:
        return margin + fpr * span

    def sy(tpr: float) -> float:
        return margin + (1.0 - tpr) * span

    polyline = " ".join(f"{sx(p.fpr):.4f},{sy(p.tpr):.4f}" for p in curve.points)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">\n'
        f'  <rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        f'fill="white" stroke="black"/>\n'
        f'  <line x1="{sx(0.0):.4f}" y1="{sy(0.0):.4f}" x2="{sx(1.0):.4f}" '
        f'y2="{sy(1.0):.4f}" stroke="gray" stroke-dasharray="6,4"/>\n'
        f'  <polyline points="{polyline}" fill="none" stroke="black" '
        f'stroke-width="1.5"/>\n'
        f'  <text x="{margin + 10}" y="{margin + 18}" font-family="sans-serif" '
        f'font-size="14">AUC = {curve.auc:.4f}</text>\n'
        f'  <text x="{size / 2:.0f}" y="{size - 8}" font-family="sans-serif" '
        f'font-size="12" text-anchor="middle">false positive rate</text>\n'
        f'  <text x="12" y="{size / 2:.0f}" font-family="sans-serif" font-size="12" '
        f'text-anchor="middle" transform="rotate(-90 12 {size / 2:.0f})">'
        f"true positive rate</text>\n"
        f"</svg>\n"
    )


def render_roc(curve: RocCurve, csv_path: str | Path, svg_path: str | Path) -> None:
    """Write the ROC CSV table and SVG plot."""
    Path(csv_path).write_text(roc_csv(curve), encoding="utf-8")
    Path(svg_path).write_text(roc_svg(curve), encoding="utf-8")


def format_report(
    tool: str,
    dataset_name: str,
    class_order: Sequence[str],
    acc: float,
    confusion: np.ndarray,
    auc: float | None = None,
    sample_count: int | None = None,
) -> str:
    """Plain-text result block: tool x dataset, accuracy, confusion, AUC."""
    lines = ["== evaluation report =="]
    lines.append(f"tool:     {tool}")
    lines.append(f"dataset:  {dataset_name}")
    lines.append(f"classes:  {'/'.join(class_order)}")
    if sample_count is not None:
        lines.append(f"samples:  {sample_count}")
    lines.append(f"accuracy: {acc:.4f}")
    if auc is not None:
        lines.append(f"auc:      {auc:.4f}")
    lines.append("confusion (rows = true, cols = predicted):")
    width = max(len(str(label)) for label in class_order)
    width = max(width, max(len(str(int(v))) for v in confusion.reshape(-1)))
    header = " " * (width + 2) + "  ".join(f"{label:>{width}}" for label in class_order)
    lines.append(header)
    for i, label in enumerate(class_order):
        row = "  ".join(f"{int(v):>{width}}" for v in confusion[i])
        lines.append(f"{label:>{width}}  {row}")
    return "\n".join(lines) + "\n"
