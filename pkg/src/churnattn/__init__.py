"""Churn prediction with an entity-embedding, multi-head self-attention
network, plus the seeded experiment harness (SMOTE / head-count / embedding
ablations, two-factor ANOVA, baseline comparison) built around it.
"""

from .autograd import Tensor, no_grad, softmax_rows
from .baselines import CartClassifier, LogisticClassifier, MlpClassifier, compare_aucs
from .data import (
    EncodedDataset,
    RawTable,
    describe,
    load_csv,
    load_encoded,
    one_hot_features,
    prepare,
    save_encoded,
    split,
)
from .metrics import auc, rod, roin
from .model import ModelConfig, RunRecord, TabularAttentionClassifier
from .optim import Adam
from .smote import SmoteOversampler, oversample
from .stats import AnovaTable, f_critical, f_upper_tail, one_tailed_welch, two_way_anova

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AnovaTable",
    "CartClassifier",
    "EncodedDataset",
    "LogisticClassifier",
    "MlpClassifier",
    "ModelConfig",
    "RawTable",
    "RunRecord",
    "SmoteOversampler",
    "TabularAttentionClassifier",
    "Tensor",
    "auc",
    "compare_aucs",
    "describe",
    "f_critical",
    "f_upper_tail",
    "load_csv",
    "load_encoded",
    "no_grad",
    "one_hot_features",
    "one_tailed_welch",
    "oversample",
    "prepare",
    "rod",
    "roin",
    "save_encoded",
    "softmax_rows",
    "split",
    "two_way_anova",
]
