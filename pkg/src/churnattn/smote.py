"""Synthetic minority oversampling over encoded datasets.

Synthetic numerics interpolate between a minority row and one of its k
nearest minority neighbors (Euclidean distance over standardized numerics);
categorical indices are copied from the nearer endpoint. New rows are
appended until the class counts are equal.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import EncodedDataset
from .exceptions import DegenerateDataError


def _standardized_for_distance(num: np.ndarray) -> np.ndarray:
    means = num.mean(axis=0)
    stds = num.std(axis=0)
    stds[stds == 0.0] = 1.0
    return (num - means) / stds


def minority_neighbor_table(num_z: np.ndarray, k: int) -> np.ndarray:
    """Indices of each row's k nearest other rows, ascending by distance."""
    sq = (num_z**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (num_z @ num_z.T)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def oversample(ds: EncodedDataset, k_neighbors: int = 5, seed: int = 0) -> EncodedDataset:
    """Append interpolated minority rows until |count(0) - count(1)| <= 1."""
    classes, counts = np.unique(ds.labels, return_counts=True)
    if len(classes) < 2:
        raise DegenerateDataError("oversample requires two classes")
    minority = int(classes[np.argmin(counts)])
    n_minority = int(counts.min())
    n_needed = int(counts.max() - counts.min())
    if k_neighbors < 1 or k_neighbors >= n_minority:
        raise DegenerateDataError(
            f"k_neighbors must satisfy 1 <= k < minority count ({n_minority}), got {k_neighbors}"
        )
    if n_needed == 0:
        return ds

    mask = ds.labels == minority
    min_num = ds.num[mask]
    min_cat = ds.cat[mask]
    neighbors = minority_neighbor_table(_standardized_for_distance(min_num), k_neighbors)

    rng = np.random.default_rng(seed)
    parents = rng.integers(0, n_minority, size=n_needed)
    picks = rng.integers(0, k_neighbors, size=n_needed)
    u = rng.uniform(0.0, 1.0, size=n_needed)
    nn = neighbors[parents, picks]

    synth_num = min_num[parents] + u[:, None] * (min_num[nn] - min_num[parents])
    synth_cat = np.where(u[:, None] < 0.5, min_cat[parents], min_cat[nn])
    synth_labels = np.full(n_needed, minority, dtype=ds.labels.dtype)

    return EncodedDataset(
        cat=np.concatenate([ds.cat, synth_cat]),
        num=np.concatenate([ds.num, synth_num]),
        labels=np.concatenate([ds.labels, synth_labels]),
        cat_levels=ds.cat_levels,
        num_means=ds.num_means,
        num_stds=ds.num_stds,
        standardized=ds.standardized,
    )


class SmoteOversampler(BaseEstimator):
    """Estimator-style wrapper around :func:`oversample`."""

    def __init__(self, k_neighbors: int = 5, seed: int = 0):
        self.k_neighbors = k_neighbors
        self.seed = seed

    def fit_resample(self, ds: EncodedDataset) -> EncodedDataset:
        return oversample(ds, k_neighbors=self.k_neighbors, seed=self.seed)
