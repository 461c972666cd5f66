"""Binary-classification metrics with exact, oracle-testable definitions.

All three metrics are pure functions of (scores, labels) and invariant under
strictly monotone transforms of the scores.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _validate(scores, labels, need_negative: bool = False):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be 1-D arrays of equal "
                              "length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels must be 0 or 1")
    if labels.sum() == 0:
        raise ValidationError("metric undefined without positive samples")
    if need_negative and labels.sum() == labels.size:
        raise ValidationError("metric undefined without negative samples")
    return scores, labels.astype(bool)


def roc_auc(scores, labels) -> float:
    """Probability a positive outscores a negative, ties counted half.

    Computed from average ranks in O(n log n); exactly the Mann-Whitney
    statistic.
    """
    scores, labels = _validate(scores, labels, need_negative=True)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Average precision: mean of precision-at-rank over the positives, with
    descending score order and ties broken by original index."""
    scores, labels = _validate(scores, labels)
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    ranks = np.arange(1, labels.size + 1)
    precision_at_rank = tp / ranks
    return float(precision_at_rank[sorted_labels].sum() / labels.sum())


def min_re_pr(scores, labels) -> float:
    """Max over thresholds of min(recall, precision), with predicted-positive
    meaning score >= threshold and thresholds taken at distinct score values."""
    scores, labels = _validate(scores, labels)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    n_pos = int(labels.sum())
    best = 0.0
    for k in range(labels.size):
        # a threshold at sorted_scores[k] admits every tied score too
        if k + 1 < labels.size and sorted_scores[k + 1] == sorted_scores[k]:
            continue
        precision = tp[k] / (k + 1)
        recall = tp[k] / n_pos
        best = max(best, min(precision, recall))
    return float(best)


def evaluate_scores(scores, labels) -> dict[str, float]:
    """All three metrics as a report-ready dict."""
    return {"roc_auc": roc_auc(scores, labels),
            "pr_auc": pr_auc(scores, labels),
            "min_re_pr": min_re_pr(scores, labels)}
