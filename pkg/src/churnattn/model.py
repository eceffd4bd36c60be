"""The attention churn classifier: entity-embedding tokenizer, multi-head
self-attention feature extractor with a residual position-wise feed-forward
block, and a (128, 64, 32) MLP head trained full-batch with Adam on summed
binary cross-entropy.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, asdict

import numpy as np
from sklearn.base import BaseEstimator

from . import autograd as ag
from .autograd import Tensor
from .data import EncodedDataset, encoders_match, one_hot_features
from .exceptions import GraphError, ShapeMismatchError, TrainingDivergedError
from .metrics import auc
from .optim import Adam
from .smote import oversample
from ._tuning import tune_malloc

N_TOKENS = 10  # 5 categorical + 5 numeric features
MODEL_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    """All hyperparameters of one training run."""

    d_model: int = 16
    n_heads: int = 8
    ffn_width: int = 64
    mlp_hidden: tuple[int, ...] = (128, 64, 32)
    epochs: int = 1000
    learning_rate: float = 1e-3
    record_every: int = 50
    seed: int = 0
    use_entity_embedding: bool = True
    use_smote: bool = True
    smote_k: int = 5

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"n_heads ({self.n_heads}) must divide d_model ({self.d_model})"
            )

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d


@dataclass
class Checkpoint:
    epoch: int
    train_loss: float
    test_auc: float | None


@dataclass
class RunRecord:
    """Time series of one training run, sampled every ``record_every`` epochs."""

    config: dict
    checkpoints: list[Checkpoint]
    param_digest: str
    wall_time_s: float

    def epochs(self) -> list[int]:
        return [c.epoch for c in self.checkpoints]

    def loss_at(self, epoch: int) -> float:
        return self._at(epoch).train_loss

    def auc_at(self, epoch: int) -> float:
        value = self._at(epoch).test_auc
        if value is None:
            raise ValueError(f"run has no test AUC at epoch {epoch}")
        return value

    def _at(self, epoch: int) -> Checkpoint:
        for c in self.checkpoints:
            if c.epoch == epoch:
                return c
        raise KeyError(f"no checkpoint at epoch {epoch}")

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "checkpoints": [
                {"epoch": c.epoch, "train_loss": c.train_loss, "test_auc": c.test_auc}
                for c in self.checkpoints
            ],
            "param_digest": self.param_digest,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            config=d["config"],
            checkpoints=[
                Checkpoint(c["epoch"], c["train_loss"], c["test_auc"])
                for c in d["checkpoints"]
            ],
            param_digest=d["param_digest"],
            wall_time_s=d["wall_time_s"],
        )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


@dataclass
class _TokenCache:
    """Constant per-dataset inputs reused across epochs."""

    onehots: list[np.ndarray] | None = None
    raw: np.ndarray | None = None

    @classmethod
    def build(cls, ds: EncodedDataset, use_entity_embedding: bool) -> "_TokenCache":
        if use_entity_embedding:
            onehots = []
            for j, card in enumerate(ds.cardinalities()):
                oh = np.zeros((ds.n_rows, card))
                oh[np.arange(ds.n_rows), ds.cat[:, j]] = 1.0
                onehots.append(oh)
            return cls(onehots=onehots)
        return cls(raw=one_hot_features(ds))


class TabularAttentionClassifier(BaseEstimator):
    """Entity embedding -> multi-head self-attention -> residual FFN -> MLP.

    Takes :class:`EncodedDataset` instances; `fit` optionally evaluates on a
    held-out set every `record_every` epochs and stores the resulting
    :class:`RunRecord` as ``run_record_``. With ``use_entity_embedding=False``
    the tokenizer is replaced by a single learned affine map from the
    one-hot + numeric vector into the same 10 x d_model token layout.
    """

    def __init__(
        self,
        d_model: int = 16,
        n_heads: int = 8,
        ffn_width: int = 64,
        mlp_hidden: tuple[int, ...] = (128, 64, 32),
        epochs: int = 1000,
        learning_rate: float = 1e-3,
        record_every: int = 50,
        seed: int = 0,
        use_entity_embedding: bool = True,
        use_smote: bool = True,
        smote_k: int = 5,
    ):
        self.d_model = d_model
        self.n_heads = n_heads
        self.ffn_width = ffn_width
        self.mlp_hidden = mlp_hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.record_every = record_every
        self.seed = seed
        self.use_entity_embedding = use_entity_embedding
        self.use_smote = use_smote
        self.smote_k = smote_k

    def config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            ffn_width=self.ffn_width,
            mlp_hidden=tuple(self.mlp_hidden),
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            record_every=self.record_every,
            seed=self.seed,
            use_entity_embedding=self.use_entity_embedding,
            use_smote=self.use_smote,
            smote_k=self.smote_k,
        )

    # -- parameters -------------------------------------------------------

    def _init_params(self, cardinalities: list[int]) -> None:
        cfg = self.config()
        d, dk, H = cfg.d_model, cfg.d_k, cfg.n_heads
        rng = np.random.default_rng(self.seed)
        self.cardinalities_ = list(cardinalities)

        if self.use_entity_embedding:
            self.embeddings_ = [
                Tensor(rng.uniform(-0.05, 0.05, size=(card, d)), requires_grad=True)
                for card in cardinalities
            ]
            self.num_w_ = Tensor(_glorot(rng, 1, d, (5, d)), requires_grad=True)
            self.num_b_ = Tensor(np.zeros((5, d)), requires_grad=True)
        else:
            width_in = sum(cardinalities) + 5
            width_out = N_TOKENS * d
            self.input_w_ = Tensor(
                _glorot(rng, width_in, width_out, (width_in, width_out)),
                requires_grad=True,
            )
            self.input_b_ = Tensor(np.zeros(width_out), requires_grad=True)

        self.heads_ = [
            tuple(
                Tensor(_glorot(rng, d, dk, (d, dk)), requires_grad=True)
                for _ in range(3)
            )
            for _ in range(H)
        ]
        self.w_out_ = Tensor(_glorot(rng, H * dk, d, (H * dk, d)), requires_grad=True)
        self.ffn_w1_ = Tensor(_glorot(rng, d, cfg.ffn_width, (d, cfg.ffn_width)), requires_grad=True)
        self.ffn_b1_ = Tensor(np.zeros(cfg.ffn_width), requires_grad=True)
        self.ffn_w2_ = Tensor(_glorot(rng, cfg.ffn_width, d, (cfg.ffn_width, d)), requires_grad=True)
        self.ffn_b2_ = Tensor(np.zeros(d), requires_grad=True)

        widths = [N_TOKENS * d, *cfg.mlp_hidden, 1]
        self.mlp_ = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            w = Tensor(_glorot(rng, fan_in, fan_out, (fan_in, fan_out)), requires_grad=True)
            b = Tensor(np.zeros(fan_out), requires_grad=True)
            self.mlp_.append((w, b))

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        if self.use_entity_embedding:
            params.extend(self.embeddings_)
            params.extend([self.num_w_, self.num_b_])
        else:
            params.extend([self.input_w_, self.input_b_])
        for wq, wk, wv in self.heads_:
            params.extend([wq, wk, wv])
        params.extend([self.w_out_, self.ffn_w1_, self.ffn_b1_, self.ffn_w2_, self.ffn_b2_])
        for w, b in self.mlp_:
            params.extend([w, b])
        return params

    def named_parameters(self) -> dict[str, Tensor]:
        names: dict[str, Tensor] = {}
        if self.use_entity_embedding:
            for j, e in enumerate(self.embeddings_):
                names[f"embedding_{j}"] = e
            names["num_w"] = self.num_w_
            names["num_b"] = self.num_b_
        else:
            names["input_w"] = self.input_w_
            names["input_b"] = self.input_b_
        for h, (wq, wk, wv) in enumerate(self.heads_):
            names[f"head{h}_wq"] = wq
            names[f"head{h}_wk"] = wk
            names[f"head{h}_wv"] = wv
        names["w_out"] = self.w_out_
        names["ffn_w1"] = self.ffn_w1_
        names["ffn_b1"] = self.ffn_b1_
        names["ffn_w2"] = self.ffn_w2_
        names["ffn_b2"] = self.ffn_b2_
        for i, (w, b) in enumerate(self.mlp_):
            names[f"mlp{i}_w"] = w
            names[f"mlp{i}_b"] = b
        return names

    # -- forward ------------------------------------------------------------

    def tokenize(self, ds: EncodedDataset, cache: "_TokenCache | None" = None) -> Tensor:
        """Per-feature tokens, shape (n, 10, d_model).

        With a cache (built once per training set), each embedding lookup is
        evaluated as one-hot @ table, which is the identical linear map but
        turns the per-epoch gather + scatter into two small gemms.
        """
        n = ds.n_rows
        d = self.d_model
        if self.use_entity_embedding:
            blocks = []
            for j, table in enumerate(self.embeddings_):
                idx = ds.cat[:, j]
                if idx.size and idx.max() >= table.data.shape[0]:
                    raise ShapeMismatchError(
                        f"categorical index out of bounds for feature {j}"
                    )
                if cache is not None:
                    looked_up = ag.matmul(Tensor(cache.onehots[j]), table)
                else:
                    looked_up = ag.embedding_lookup(table, idx)
                blocks.append(ag.reshape(looked_up, (n, 1, d)))
            blocks.append(ag.scalar_tokens(ds.num, self.num_w_, self.num_b_))
            return ag.concat(blocks, axis=1)
        raw = Tensor(cache.raw if cache is not None else one_hot_features(ds))
        flat = ag.affine(raw, self.input_w_, self.input_b_)
        return ag.reshape(flat, (n, N_TOKENS, self.d_model))

    def attention_head(self, tokens: Tensor, head_index: int) -> Tensor:
        """softmax(Q K^T / sqrt(d_k)) V for one head, shape (n, 10, d_k)."""
        wq, wk, wv = self.heads_[head_index]
        q = ag.matmul(tokens, wq)
        k = ag.matmul(tokens, wk)
        v = ag.matmul(tokens, wv)
        scores = ag.scale(ag.matmul(q, ag.transpose_last2(k)), 1.0 / math.sqrt(self.config().d_k))
        return ag.matmul(ag.softmax_rows(scores), v)

    def _project_qkv(self, tokens: Tensor) -> Tensor:
        """All heads' Q, K and V in one projection, shape (n, T, 3, H, d_k)."""
        n, t, _ = tokens.data.shape
        combined = ag.concat(
            [h[which] for which in range(3) for h in self.heads_], axis=1
        )
        stacked = ag.matmul(tokens, combined)
        return ag.reshape(stacked, (n, t, 3, self.n_heads, self.config().d_k))

    def multi_head(self, tokens: Tensor) -> Tensor:
        """Concatenated head outputs re-projected to d_model width.

        All heads are evaluated in one stacked batch; the result matches the
        head-by-head composition of :meth:`attention_head`.
        """
        n, t, _ = tokens.data.shape
        dk = self.config().d_k
        out = ag.scaled_attention(self._project_qkv(tokens), 1.0 / math.sqrt(dk))
        return ag.matmul(ag.reshape(out, (n, t, self.n_heads * dk)), self.w_out_)

    def attention_weights(self, ds: EncodedDataset) -> np.ndarray:
        """Attention matrices for inspection, shape (n, heads, tokens, tokens)."""
        with ag.no_grad():
            tokens = self.tokenize(ds)
            dk = self.config().d_k
            qkv = self._project_qkv(tokens).data
            q = np.ascontiguousarray(qkv[:, :, 0].transpose(0, 2, 1, 3))
            k = np.ascontiguousarray(qkv[:, :, 1].transpose(0, 2, 1, 3))
            scores = Tensor(np.matmul(q, k.swapaxes(-1, -2)) / math.sqrt(dk))
            return ag.softmax_rows(scores).data

    def extractor_forward(self, tokens: Tensor) -> Tensor:
        """Residual attention + residual position-wise FFN, flattened."""
        y1 = ag.add(tokens, self.multi_head(tokens))
        hidden = ag.affine(y1, self.ffn_w1_, self.ffn_b1_, relu_out=True)
        y2 = ag.add(y1, ag.affine(hidden, self.ffn_w2_, self.ffn_b2_))
        n = tokens.data.shape[0]
        return ag.reshape(y2, (n, N_TOKENS * self.d_model))

    def classify_logits(self, features: Tensor) -> Tensor:
        h = features
        for w, b in self.mlp_[:-1]:
            h = ag.affine(h, w, b, relu_out=True)
        w, b = self.mlp_[-1]
        return ag.reshape(ag.affine(h, w, b), (features.data.shape[0],))

    def classify(self, features: Tensor) -> Tensor:
        """Churn probability in (0, 1) for extracted feature rows."""
        return ag.sigmoid(self.classify_logits(features))

    def forward_logits(self, ds: EncodedDataset, cache: _TokenCache | None = None) -> Tensor:
        return self.classify_logits(self.extractor_forward(self.tokenize(ds, cache)))

    # -- training / inference ------------------------------------------------

    def fit(self, train: EncodedDataset, eval_ds: EncodedDataset | None = None):
        """Full-batch Adam on summed binary cross-entropy.

        Records (epoch, train loss, test AUC) at every multiple of
        ``record_every``; the recorded loss is the epoch's own forward value,
        the AUC is evaluated after the epoch's update.
        """
        cfg = self.config()  # validates head/width combination
        tune_malloc()
        start = time.perf_counter()
        if self.use_smote:
            train = oversample(train, k_neighbors=self.smote_k, seed=self.seed)
        self.cat_levels_ = train.cat_levels
        self._init_params(train.cardinalities())
        optimizer = Adam(self.parameters(), learning_rate=self.learning_rate)
        y = train.labels.astype(np.float64)
        cache = _TokenCache.build(train, self.use_entity_embedding)

        checkpoints: list[Checkpoint] = []
        for epoch in range(1, self.epochs + 1):
            loss = ag.bce_with_logits_sum(self.forward_logits(train, cache), y)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(epoch)
            loss.backward()
            optimizer.step()
            if epoch % self.record_every == 0:
                test_auc = None
                if eval_ds is not None:
                    test_auc = auc(self.predict_proba(eval_ds), eval_ds.labels)
                checkpoints.append(Checkpoint(epoch, loss_value, test_auc))

        self.run_record_ = RunRecord(
            config=cfg.to_dict(),
            checkpoints=checkpoints,
            param_digest=self.param_digest(),
            wall_time_s=time.perf_counter() - start,
        )
        return self

    def predict_proba(self, ds: EncodedDataset) -> np.ndarray:
        """One churn probability per row, deterministic in row order."""
        if not hasattr(self, "cat_levels_"):
            raise GraphError("predict_proba called before fit")
        if ds.cat_levels != self.cat_levels_:
            raise ShapeMismatchError(
                "dataset encoder does not match the encoder this model was fit with"
            )
        with ag.no_grad():
            probs = ag.sigmoid(self.forward_logits(ds)).data
        return probs

    def predict(self, ds: EncodedDataset) -> np.ndarray:
        return (self.predict_proba(ds) >= 0.5).astype(np.int64)

    def param_digest(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()

    # -- checkpoint serialization ---------------------------------------------

    def save(self, path) -> None:
        """Versioned JSON checkpoint (decimal text, so endianness-free)."""
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "config": self.config().to_dict(),
            "cat_levels": self.cat_levels_,
            "cardinalities": self.cardinalities_,
            "params": {k: v.data.tolist() for k, v in self.named_parameters().items()},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "TabularAttentionClassifier":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model checkpoint version in {path}")
        cfg = dict(doc["config"])
        cfg["mlp_hidden"] = tuple(cfg["mlp_hidden"])
        model = cls(**cfg)
        model.cat_levels_ = doc["cat_levels"]
        model._init_params(doc["cardinalities"])
        named = model.named_parameters()
        for name, values in doc["params"].items():
            named[name].data = np.asarray(values, dtype=np.float64)
        return model
