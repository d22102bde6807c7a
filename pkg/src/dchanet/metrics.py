"""Accuracy, ROC AUC and the two-head decision rule."""

import numpy as np
from scipy.stats import rankdata

from .errors import LabelError

THRESHOLD = 0.5


def decide(p_cc, p_mlo, threshold=THRESHOLD):
    """Average the two head probabilities; malignant iff strictly above threshold."""
    p = (float(p_cc) + float(p_mlo)) / 2.0
    return p, int(p > threshold)


def compute_auc(scores, labels):
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counted as 1/2.

    Uses average ranks, O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LabelError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise LabelError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise LabelError("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(decisions, labels):
    decisions, labels = np.asarray(decisions), np.asarray(labels)
    return float((decisions == labels).mean())
