"""Regression and ranking metrics."""

import numpy as np
from scipy.stats import rankdata

from ..errors import DegenerateVariance, DimensionMismatch, SingleClass


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    return float((a @ b) / np.sqrt((a @ a) * (b @ b)))


def regression_metrics(preds, labels):
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise DimensionMismatch("preds and labels must be 1-d and the same length")
    if preds.size < 2:
        raise DimensionMismatch("need at least two points")
    ss_tot = float(np.sum((labels - labels.mean()) ** 2))
    if ss_tot == 0:
        raise DegenerateVariance("labels are constant")
    r2 = 1.0 - float(np.sum((labels - preds) ** 2)) / ss_tot
    if np.all(preds == preds[0]):
        raise DegenerateVariance("predictions are constant; correlations undefined", r2=r2)
    return {
        "r2": r2,
        "pearson": _pearson(preds, labels),
        "spearman": _pearson(rankdata(preds), rankdata(labels)),
    }


def auroc(scores, labels):
    """Mann-Whitney form: P(score_pos > score_neg) + 0.5 P(tie)."""
    r = rankdata(scores)
    pos = labels == 1
    n_pos, n_neg = pos.sum(), (~pos).sum()
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(scores, labels):
    """Step-wise average precision: sum over thresholds of (R_k - R_{k-1}) P_k."""
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of each block of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    precision = tp / (ends + 1)
    recall = tp / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def classification_metrics(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionMismatch("scores and labels must be 1-d and the same length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    if labels.min() == labels.max():
        raise SingleClass("both classes must be present")
    return {"auroc": auroc(scores, labels), "auprc": auprc(scores, labels)}
