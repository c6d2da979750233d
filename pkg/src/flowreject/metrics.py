"""Ranking and threshold metrics for TP/FP score sets.

Convention throughout: labels are 0 for TP (normal detection) and 1 for FP
(the anomaly to be rejected); scores are anomaly scores, higher = more
FP-like.  FP is the positive class for AP, precision, and sensitivity, so
"precision of rejecting FPs" is the literal reported precision.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError(
            f"scores and labels must be equal-length 1-D, got {scores.shape} vs {labels.shape}"
        )
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise DataError("both labels (TP=0, FP=1) must be present")
    return scores, labels


def _ranked_counts(scores, labels):
    """Cumulative positive/total counts at each distinct descending threshold."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # indices where a run of equal scores ends
    last = np.nonzero(np.diff(s) != 0)[0]
    ends = np.concatenate([last, [len(s) - 1]])
    cum_pos = np.cumsum(y)[ends]
    cum_tot = ends + 1
    thresholds = s[ends]
    return thresholds, cum_pos, cum_tot


def average_precision(scores, labels) -> float:
    """Sum over descending thresholds of (recall step) * precision."""
    scores, labels = _validate(scores, labels)
    _, cum_pos, cum_tot = _ranked_counts(scores, labels)
    n_pos = labels.sum()
    recall = cum_pos / n_pos
    precision = cum_pos / cum_tot
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * precision))


def roc_auc(scores, labels) -> float:
    """Probability a random FP outscores a random TP; ties count one half."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _f1(tp, fp, fn) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


def select_threshold_f1(scores, labels):
    """Threshold maximizing F1 for the FP class under the rule reject iff score > t.

    Candidates are midpoints between consecutive distinct scores plus the
    reject-all and reject-none extremes; ties break toward the higher
    threshold (fewer rejections).  Returns (threshold, f1).
    """
    scores, labels = _validate(scores, labels)
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    candidates = np.concatenate([[distinct[0] - 1.0], mids, [distinct[-1]]])
    best_t, best_f1 = candidates[0], -1.0
    for t in candidates:
        pred = scores > t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        f1 = _f1(tp, fp, fn)
        if f1 >= best_f1:
            best_t, best_f1 = float(t), f1
    return best_t, best_f1


def confusion_metrics(scores, labels, threshold):
    """(accuracy, precision, sensitivity, specificity) at reject iff score > t.

    Zero-denominator metrics come back as nan, never silently 0.
    """
    scores, labels = _validate(scores, labels)
    if not np.isfinite(threshold):
        raise DataError(f"threshold must be finite, got {threshold}")
    pred = scores > threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    acc = (tp + tn) / len(labels)
    prec = tp / (tp + fp) if (tp + fp) > 0 else float("nan")
    sens = tp / (tp + fn) if (tp + fn) > 0 else float("nan")
    spec = tn / (tn + fp) if (tn + fp) > 0 else float("nan")
    return acc, prec, sens, spec


def pr_curve(scores, labels):
    """(threshold, precision, recall) rows at each distinct descending score."""
    scores, labels = _validate(scores, labels)
    thresholds, cum_pos, cum_tot = _ranked_counts(scores, labels)
    n_pos = labels.sum()
    return np.column_stack([thresholds, cum_pos / cum_tot, cum_pos / n_pos])


def roc_curve(scores, labels):
    """(threshold, fpr, tpr) rows at each distinct descending score."""
    scores, labels = _validate(scores, labels)
    thresholds, cum_pos, cum_tot = _ranked_counts(scores, labels)
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    cum_neg = cum_tot - cum_pos
    return np.column_stack([thresholds, cum_neg / n_neg, cum_pos / n_pos])


def nll_histogram(scores, labels, bins: int = 30):
    """Per-label binned score counts over a shared bin grid."""
    scores, labels = _validate(scores, labels)
    finite = scores[np.isfinite(scores)]
    lo, hi = (finite.min(), finite.max()) if len(finite) else (0.0, 1.0)
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    h_tp, _ = np.histogram(scores[labels == 0], bins=edges)
    h_fp, _ = np.histogram(scores[labels == 1], bins=edges)
    return {"edges": edges.tolist(), "tp": h_tp.tolist(), "fp": h_fp.tolist()}
