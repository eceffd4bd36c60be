"""Comparison models: logistic regression, a CART decision tree, and a plain
MLP identical to the attention model's classifier block. Logistic and MLP are
trained with the same full-batch Adam / summed-BCE recipe as the main model so
the comparison isolates the feature extractor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import autograd as ag
from .autograd import Tensor
from .data import EncodedDataset, one_hot_features
from .exceptions import DegenerateDataError, GraphError, TrainingDivergedError
from .model import _glorot
from .optim import Adam
from .stats import one_tailed_welch
from ._tuning import tune_malloc


class _AdamTrainedClassifier(BaseEstimator):
    """Shared training loop for the gradient-trained baselines."""

    def _build_params(self, rng: np.random.Generator, n_features: int) -> None:
        raise NotImplementedError

    def _logits(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def fit(self, train: EncodedDataset):
        if len(np.unique(train.labels)) < 2:
            raise DegenerateDataError("training data contains a single class")
        tune_malloc()
        x = one_hot_features(train)
        self.cat_levels_ = train.cat_levels
        rng = np.random.default_rng(self.seed)
        self._build_params(rng, x.shape[1])
        optimizer = Adam(self.params_, learning_rate=self.learning_rate)
        xt = Tensor(x)
        y = train.labels.astype(np.float64)
        for epoch in range(1, self.epochs + 1):
            loss = ag.bce_with_logits_sum(self._logits(xt), y)
            if self.l2 > 0.0:
                penalty = ag.scale(
                    ag.tensor_sum(ag.concat([ag.reshape(ag.mul(w, w), (-1,)) for w in self.weights_], axis=0)),
                    self.l2,
                )
                loss = ag.add(loss, penalty)
            if not np.isfinite(float(loss.data)):
                raise TrainingDivergedError(epoch)
            loss.backward()
            optimizer.step()
        return self

    def predict_proba(self, ds: EncodedDataset) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise GraphError("predict_proba called before fit")
        with ag.no_grad():
            return ag.sigmoid(self._logits(Tensor(one_hot_features(ds)))).data


class LogisticClassifier(_AdamTrainedClassifier):
    """Logistic regression on one-hot categoricals + standardized numerics."""

    def __init__(self, epochs: int = 1000, learning_rate: float = 1e-3, l2: float = 0.0, seed: int = 0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.l2 = l2
        self.seed = seed

    def _build_params(self, rng, n_features):
        self.w_ = Tensor(np.zeros((n_features, 1)), requires_grad=True)
        self.b_ = Tensor(np.zeros(1), requires_grad=True)
        self.params_ = [self.w_, self.b_]
        self.weights_ = [self.w_]

    def _logits(self, x: Tensor) -> Tensor:
        return ag.reshape(ag.affine(x, self.w_, self.b_), (x.data.shape[0],))


class MlpClassifier(_AdamTrainedClassifier):
    """The attention model's classifier block on its own: (128, 64, 32) + output."""

    def __init__(
        self,
        hidden: tuple[int, ...] = (128, 64, 32),
        epochs: int = 1000,
        learning_rate: float = 1e-3,
        l2: float = 0.0,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.l2 = l2
        self.seed = seed

    def _build_params(self, rng, n_features):
        widths = [n_features, *self.hidden, 1]
        self.layers_ = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            w = Tensor(_glorot(rng, fan_in, fan_out, (fan_in, fan_out)), requires_grad=True)
            b = Tensor(np.zeros(fan_out), requires_grad=True)
            self.layers_.append((w, b))
        self.params_ = [t for pair in self.layers_ for t in pair]
        self.weights_ = [w for w, _ in self.layers_]

    def _logits(self, x: Tensor) -> Tensor:
        h = x
        for w, b in self.layers_[:-1]:
            h = ag.relu(ag.affine(h, w, b))
        w, b = self.layers_[-1]
        return ag.reshape(ag.affine(h, w, b), (x.data.shape[0],))


# -- CART ---------------------------------------------------------------------

@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    prob: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


class CartClassifier(BaseEstimator):
    """Binary CART with gini impurity; categorical indices treated as ordinal.

    Split thresholds are midpoints between consecutive distinct values, so
    predictions are invariant to strictly monotone transforms of any single
    feature.
    """

    def __init__(self, max_depth: int = 8, min_samples_leaf: int = 10):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    @staticmethod
    def _features(ds: EncodedDataset) -> np.ndarray:
        return np.concatenate([ds.cat.astype(np.float64), ds.num], axis=1)

    def fit(self, train: EncodedDataset):
        x = self._features(train)
        y = train.labels.astype(np.float64)
        self.cat_levels_ = train.cat_levels
        self.root_ = self._grow(x, y, depth=0)
        return self

    def _grow(self, x: np.ndarray, y: np.ndarray, depth: int) -> _Node:
        node = _Node(prob=float(y.mean()))
        n = len(y)
        if depth >= self.max_depth or n < 2 * self.min_samples_leaf or y.min() == y.max():
            return node
        best = self._best_split(x, y)
        if best is None:
            return node
        feature, threshold = best
        go_left = x[:, feature] <= threshold
        node.feature = feature
        node.threshold = threshold
        node.left = self._grow(x[go_left], y[go_left], depth + 1)
        node.right = self._grow(x[~go_left], y[~go_left], depth + 1)
        return node

    def _best_split(self, x: np.ndarray, y: np.ndarray) -> tuple[int, float] | None:
        n = len(y)
        total_pos = y.sum()
        best_score = np.inf
        best = None
        for j in range(x.shape[1]):
            order = np.argsort(x[:, j], kind="stable")
            xs = x[order, j]
            ys = y[order]
            pos_left = np.cumsum(ys)[:-1]
            n_left = np.arange(1, n)
            valid = xs[1:] != xs[:-1]
            n_right = n - n_left
            valid &= (n_left >= self.min_samples_leaf) & (n_right >= self.min_samples_leaf)
            if not valid.any():
                continue
            p_left = pos_left / n_left
            p_right = (total_pos - pos_left) / n_right
            gini = n_left * p_left * (1.0 - p_left) + n_right * p_right * (1.0 - p_right)
            gini[~valid] = np.inf
            k = int(np.argmin(gini))
            if gini[k] < best_score:
                best_score = gini[k]
                best = (j, 0.5 * (xs[k] + xs[k + 1]))
        return best

    def predict_proba(self, ds: EncodedDataset) -> np.ndarray:
        if not hasattr(self, "root_"):
            raise GraphError("predict_proba called before fit")
        x = self._features(ds)
        out = np.empty(len(x))
        for i, row in enumerate(x):
            node = self.root_
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.prob
        return out


# -- comparison report ----------------------------------------------------------

@dataclass
class ComparisonRow:
    model: str
    mean_auc: float
    std_auc: float
    t_statistic: float | None
    p_value: float | None


def compare_aucs(
    reference_name: str, auc_samples: dict[str, list[float]]
) -> list[ComparisonRow]:
    """One-tailed Welch tests that the reference model's AUC exceeds each other's."""
    reference = auc_samples[reference_name]
    if len(reference) < 2:
        raise ValueError("need >= 2 runs per model for the comparison report")
    rows = []
    for name, sample in auc_samples.items():
        arr = np.asarray(sample, dtype=np.float64)
        if len(arr) < 2:
            raise ValueError(f"model {name!r} has fewer than 2 runs")
        if name == reference_name:
            rows.append(ComparisonRow(name, float(arr.mean()), float(arr.std(ddof=1)), None, None))
            continue
        t, p = one_tailed_welch(reference, arr, direction="greater")
        rows.append(ComparisonRow(name, float(arr.mean()), float(arr.std(ddof=1)), t, p))
    return rows
