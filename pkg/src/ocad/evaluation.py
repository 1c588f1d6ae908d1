"""Frame-level ROC / AUC against binary ground truth.

A frame is a positive when its ground-truth label is 1. The ROC sweeps a
threshold over the distinct score values (predict abnormal when
score >= threshold); the AUC is the trapezoidal integral, which equals the
Mann-Whitney statistic with ties counted 1/2.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import UndefinedMetricError, ValidationError


@dataclass
class RocResult:
    thresholds: np.ndarray  # descending; point i uses score >= thresholds[i]
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def frame_auc(scores, labels):
    """ROC and AUC of per-frame scores against 0/1 labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError(
            f"scores {scores.shape} and labels {labels.shape} must be equal-length 1-d arrays"
        )
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC undefined: labels contain {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # one ROC point per distinct score: the last index of each tie group
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([distinct, [scores.size - 1]])
    tpr = np.concatenate([[0.0], tp[ends] / n_pos])
    fpr = np.concatenate([[0.0], fp[ends] / n_neg])
    thresholds = np.concatenate([[np.inf], sorted_scores[ends]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)
    return RocResult(thresholds=thresholds, tpr=tpr, fpr=fpr, auc=auc)


def aggregate_auc(per_video, mode="concat"):
    """AUC over several (scores, labels) videos.

    concat: one AUC over the pooled frames (default). macro: mean of the
    per-video AUCs over videos that contain both classes.
    """
    if not per_video:
        raise ValidationError("need at least one video")
    if mode == "concat":
        scores = np.concatenate([np.asarray(s, dtype=np.float64) for s, _ in per_video])
        labels = np.concatenate([np.asarray(l) for _, l in per_video])
        return frame_auc(scores, labels).auc
    if mode == "macro":
        aucs = []
        for scores, labels in per_video:
            labels = np.asarray(labels)
            if 0 < labels.sum() < labels.size:
                aucs.append(frame_auc(scores, labels).auc)
        if not aucs:
            raise UndefinedMetricError("macro AUC undefined: no video has both classes")
        return float(np.mean(aucs))
    raise ValidationError(f"unknown aggregation mode {mode!r}")
