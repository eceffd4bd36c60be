"""Rank-based AUC and the relative train-loss / test-AUC change metrics."""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateDataError


def average_ranks(values: np.ndarray) -> np.ndarray:
    """Ascending 1-based ranks; tied values share the average of their ranks."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # ranks i+1 .. j+1 averaged across the tie block
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum formula.

    With S the rank sum of the M positives among all M+N scores (ascending,
    average ranks for ties), AUC = (S - M(M+1)/2) / (M*N).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    pos = labels == 1
    m = int(pos.sum())
    n = int(len(labels) - m)
    if m == 0 or n == 0:
        raise DegenerateDataError("AUC undefined: both classes must be present")
    s = average_ranks(scores)[pos].sum()
    return (s - m * (m + 1) / 2.0) / (m * n)


def rod(loss_early: float, loss_late: float) -> float:
    """Relative decrease of train loss between two checkpoints."""
    if loss_early <= 0:
        raise ValueError(f"loss_early must be positive, got {loss_early}")
    return (loss_early - loss_late) / loss_early


def roin(auc_early: float, auc_late: float) -> float:
    """Relative increase of test AUC between two checkpoints."""
    if auc_early <= 0:
        raise ValueError(f"auc_early must be positive, got {auc_early}")
    return (auc_late - auc_early) / auc_early
