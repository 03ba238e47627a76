"""Classification metrics: rank-based AUC (with a pairwise oracle) and accuracy."""

from __future__ import annotations

import numpy as np


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"auc: {scores.size} scores but {labels.size} labels")
    if not np.isfinite(scores).all():
        raise ValueError("auc: scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("auc: labels must be 0/1")
    pos = labels == 1
    if pos.all() or not pos.any():
        raise ValueError("auc: undefined for single-class labels")
    return scores, pos


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average of their positions."""
    values = np.asarray(values)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    # Boundaries of runs of equal values.
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], values.size]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(values.size)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Area under the ROC curve, P(s_pos > s_neg) + P(tie) / 2.

    Mann-Whitney U over midranks, O(n log n).
    """
    scores, pos = _check_binary(scores, labels)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    u = midranks(scores)[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pairwise(scores, labels) -> float:
    """O(n^2) reference: count every positive/negative pair."""
    scores, pos = _check_binary(scores, labels)
    sp, sn = scores[pos], scores[~pos]
    diff = sp[:, None] - sn[None, :]
    wins = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return float(wins / (sp.size * sn.size))


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"accuracy: length mismatch ({predictions.size} vs {labels.size})"
        )
    if predictions.size == 0:
        raise ValueError("accuracy: empty input")
    return float((predictions == labels).mean())


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; 0 for a single value)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("mean_std: no values")
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std
