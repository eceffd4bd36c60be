import json

import numpy as np
import pytest

from churnattn import autograd as ag
from churnattn.autograd import Tensor
from churnattn.data import one_hot_features
from churnattn.exceptions import ShapeMismatchError, TrainingDivergedError
from churnattn.metrics import auc
from churnattn.model import ModelConfig, TabularAttentionClassifier, _TokenCache

from conftest import toy_dataset
from gradcheck import finite_difference_grad, max_relative_error


def small_model(ds, **kwargs) -> TabularAttentionClassifier:
    params = dict(d_model=8, n_heads=2, ffn_width=16, mlp_hidden=(8, 4),
                  epochs=1, record_every=1, seed=0, use_smote=False)
    params.update(kwargs)
    m = TabularAttentionClassifier(**params)
    m.cat_levels_ = ds.cat_levels
    m._init_params(ds.cardinalities())
    return m


def test_config_validates_head_divisibility():
    with pytest.raises(ValueError):
        ModelConfig(d_model=16, n_heads=3)


def test_tokenize_is_table_lookup():
    ds = toy_dataset(n=12)
    m = small_model(ds)
    tokens = m.tokenize(ds).data
    for i in range(12):
        for j in range(5):
            np.testing.assert_array_equal(
                tokens[i, j], m.embeddings_[j].data[ds.cat[i, j]]
            )


def test_embedding_lookup_equals_one_hot_matmul():
    ds = toy_dataset(n=20)
    m = small_model(ds)
    direct = m.tokenize(ds).data
    cached = m.tokenize(ds, cache=_TokenCache.build(ds, True)).data
    np.testing.assert_allclose(direct, cached, atol=1e-15)


def test_numeric_token_at_zero_is_bias():
    ds = toy_dataset(n=4)
    ds.num[:] = 0.0
    m = small_model(ds)
    tokens = m.tokenize(ds).data
    for j in range(5):
        np.testing.assert_array_equal(tokens[0, 5 + j], m.num_b_.data[j])


def test_tokenize_rejects_out_of_range_index():
    ds = toy_dataset(n=4)
    m = small_model(ds)
    ds.cat[0, 0] = 99
    with pytest.raises(ShapeMismatchError):
        m.tokenize(ds)


def test_single_token_identity_projection_is_identity():
    # one token, d_k = d_model, identity Q/K/V: softmax of 1x1 is 1, out = token
    ds = toy_dataset(n=6)
    m = small_model(ds, d_model=8, n_heads=1)
    for w in m.heads_[0]:
        w.data = np.eye(8)
    tokens = Tensor(np.random.default_rng(0).normal(size=(6, 1, 8)))
    out = m.attention_head(tokens, 0)
    np.testing.assert_allclose(out.data, tokens.data, atol=1e-12)


def test_zero_keys_give_uniform_attention():
    ds = toy_dataset(n=5)
    m = small_model(ds)
    wq, wk, wv = m.heads_[0]
    wk.data = np.zeros_like(wk.data)
    tokens = m.tokenize(ds)
    out = m.attention_head(tokens, 0).data
    v = tokens.data @ wv.data
    np.testing.assert_allclose(out, np.repeat(v.mean(axis=1, keepdims=True), 10, axis=1), atol=1e-12)


def test_two_token_attention_matches_direct_formula():
    ds = toy_dataset(n=3)
    m = small_model(ds, d_model=4, n_heads=2)
    rng = np.random.default_rng(7)
    tokens_data = rng.normal(size=(3, 2, 4))
    wq, wk, wv = (w.data for w in m.heads_[1])
    q, k, v = tokens_data @ wq, tokens_data @ wk, tokens_data @ wv
    scores = q @ k.swapaxes(-1, -2) / np.sqrt(2.0)
    e = np.exp(scores - scores.max(-1, keepdims=True))
    expected = (e / e.sum(-1, keepdims=True)) @ v
    out = m.attention_head(Tensor(tokens_data), 1)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_single_head_with_identity_output_projection():
    ds = toy_dataset(n=9)
    m = small_model(ds, d_model=8, n_heads=1)
    m.w_out_.data = np.eye(8)
    tokens = m.tokenize(ds)
    np.testing.assert_allclose(
        m.multi_head(tokens).data, m.attention_head(tokens, 0).data, atol=1e-12
    )


@pytest.mark.parametrize("heads", [1, 2, 4, 8])
def test_multi_head_width_and_equivalence(heads):
    ds = toy_dataset(n=7)
    m = small_model(ds, d_model=8, n_heads=heads)
    tokens = m.tokenize(ds)
    fast = m.multi_head(tokens)
    assert fast.data.shape == (7, 10, 8)
    manual = ag.matmul(
        ag.concat([m.attention_head(tokens, h) for h in range(heads)], axis=-1),
        m.w_out_,
    )
    np.testing.assert_allclose(fast.data, manual.data, atol=1e-12)


def test_extractor_zero_weights_is_pure_residual():
    ds = toy_dataset(n=6)
    m = small_model(ds)
    for wq, wk, wv in m.heads_:
        wq.data[:] = 0.0
        wk.data[:] = 0.0
        wv.data[:] = 0.0
    m.ffn_w1_.data[:] = 0.0
    m.ffn_w2_.data[:] = 0.0
    tokens = m.tokenize(ds)
    out = m.extractor_forward(tokens).data
    np.testing.assert_allclose(out, tokens.data.reshape(6, -1), atol=1e-15)


def test_extractor_token_permutation_equivariance():
    ds = toy_dataset(n=5)
    m = small_model(ds)
    tokens = m.tokenize(ds).data
    perm = np.array([3, 1, 4, 0, 2, 8, 6, 9, 5, 7])

    def pre_flatten(tok):
        y1 = ag.add(Tensor(tok), m.multi_head(Tensor(tok)))
        hidden = ag.affine(y1, m.ffn_w1_, m.ffn_b1_, relu_out=True)
        return ag.add(y1, ag.affine(hidden, m.ffn_w2_, m.ffn_b2_)).data

    base = pre_flatten(tokens)
    permuted = pre_flatten(tokens[:, perm, :])
    # equivariance is exact in exact arithmetic; permuting reorders float
    # summations, so allow summation-order rounding
    np.testing.assert_allclose(permuted, base[:, perm, :], atol=1e-12)


def test_attention_rows_sum_to_one():
    ds = toy_dataset(n=40)
    m = small_model(ds)
    weights = m.attention_weights(ds)
    assert weights.shape == (40, 2, 10, 10)
    np.testing.assert_allclose(weights.sum(axis=-1), np.ones((40, 2, 10)), atol=1e-12)


def test_classifier_zero_weights_give_half():
    ds = toy_dataset(n=8)
    m = small_model(ds)
    for w, b in m.mlp_:
        w.data[:] = 0.0
        b.data[:] = 0.0
    probs = ag.sigmoid(m.forward_logits(ds)).data
    np.testing.assert_allclose(probs, np.full(8, 0.5), atol=1e-15)


def test_classifier_monotone_in_final_bias():
    ds = toy_dataset(n=8)
    m = small_model(ds)
    base = ag.sigmoid(m.forward_logits(ds)).data.copy()
    m.mlp_[-1][1].data += 0.75
    shifted = ag.sigmoid(m.forward_logits(ds)).data
    assert np.all(shifted > base)


def test_classifier_output_in_unit_interval():
    ds = toy_dataset(n=1000, seed=3)
    m = small_model(ds, seed=5)
    probs = ag.sigmoid(m.forward_logits(ds)).data
    assert probs.shape == (1000,)
    assert np.all((probs > 0.0) & (probs < 1.0))
    assert np.all(np.isfinite(probs))


def test_full_model_gradients_match_finite_differences():
    ds = toy_dataset(n=16, seed=1)
    m = small_model(ds, seed=2)
    y = ds.labels.astype(np.float64)

    def loss_value():
        return float(ag.bce_with_logits_sum(m.forward_logits(ds), y).data)

    loss = ag.bce_with_logits_sum(m.forward_logits(ds), y)
    loss.backward()
    for name, p in m.named_parameters().items():
        analytic = p.grad
        assert analytic is not None, name

        def f(x, p=p):
            saved = p.data
            p.data = x
            value = loss_value()
            p.data = saved
            return value

        numeric = finite_difference_grad(f, p.data.copy())
        assert max_relative_error(analytic, numeric) < 1e-4, name


def test_training_reaches_perfect_auc_on_separable_data():
    ds = toy_dataset(n=60, seed=4, separable=True)
    m = TabularAttentionClassifier(
        d_model=8, n_heads=2, ffn_width=16, mlp_hidden=(8, 4),
        epochs=200, record_every=50, seed=0, use_smote=False,
    )
    m.fit(ds)
    scores = m.predict_proba(ds)
    assert auc(scores, ds.labels) == 1.0


def test_fit_records_checkpoints_and_is_bit_identical():
    train = toy_dataset(n=50, seed=6)
    test = toy_dataset(n=30, seed=7)
    kwargs = dict(d_model=8, n_heads=2, ffn_width=16, mlp_hidden=(8, 4),
                  epochs=40, record_every=10, seed=3, use_smote=False)
    m1 = TabularAttentionClassifier(**kwargs).fit(train, eval_ds=test)
    m2 = TabularAttentionClassifier(**kwargs).fit(train, eval_ds=test)
    r1, r2 = m1.run_record_, m2.run_record_
    assert [c.epoch for c in r1.checkpoints] == [10, 20, 30, 40]
    assert all(
        a.train_loss == b.train_loss and a.test_auc == b.test_auc
        for a, b in zip(r1.checkpoints, r2.checkpoints)
    )
    assert r1.param_digest == r2.param_digest
    assert r1.config == r2.config


def test_smote_inside_fit_balances_training():
    train = toy_dataset(n=80, seed=8)
    train.labels = (np.arange(80) < 16).astype(np.int64)  # 16 vs 64
    m = TabularAttentionClassifier(
        d_model=8, n_heads=2, ffn_width=16, mlp_hidden=(8, 4),
        epochs=5, record_every=5, seed=0, use_smote=True, smote_k=3,
    )
    m.fit(train)  # would raise if the resampling pipeline were broken
    assert m.run_record_.checkpoints[-1].train_loss > 0


def test_predict_contracts():
    train = toy_dataset(n=40, seed=9)
    m = TabularAttentionClassifier(
        d_model=8, n_heads=2, ffn_width=16, mlp_hidden=(8, 4),
        epochs=5, record_every=5, seed=0, use_smote=False,
    ).fit(train)
    scores = m.predict_proba(train)
    assert scores.shape == (40,)
    # identical rows score identically
    dup = train.take(np.array([0, 0, 1]))
    s = m.predict_proba(dup)
    assert s[0] == s[1]
    # row order does not matter
    perm = np.random.default_rng(0).permutation(40)
    np.testing.assert_array_equal(m.predict_proba(train.take(perm)), scores[perm])
    # mismatched encoder rejected
    other = toy_dataset(n=5, n_cat_levels=(2, 2, 2, 2, 2))
    with pytest.raises(ShapeMismatchError):
        m.predict_proba(other)


def test_divergence_aborts_with_epoch():
    train = toy_dataset(n=30, seed=10)
    m = TabularAttentionClassifier(
        d_model=8, n_heads=2, ffn_width=16, mlp_hidden=(8, 4),
        epochs=60, record_every=10, seed=0, use_smote=False, learning_rate=1e308,
    )
    with pytest.raises(TrainingDivergedError) as err:
        m.fit(train)
    assert err.value.epoch > 0


def test_no_embedding_variant_uses_affine_tokenizer():
    train = toy_dataset(n=50, seed=11)
    m = TabularAttentionClassifier(
        d_model=8, n_heads=2, ffn_width=16, mlp_hidden=(8, 4),
        epochs=5, record_every=5, seed=0, use_smote=False, use_entity_embedding=False,
    ).fit(train)
    tokens = m.tokenize(train).data
    assert tokens.shape == (50, 10, 8)
    raw = one_hot_features(train)
    expected = (raw @ m.input_w_.data + m.input_b_.data).reshape(50, 10, 8)
    np.testing.assert_allclose(tokens, expected, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    train = toy_dataset(n=40, seed=12)
    m = TabularAttentionClassifier(
        d_model=8, n_heads=2, ffn_width=16, mlp_hidden=(8, 4),
        epochs=5, record_every=5, seed=0, use_smote=False,
    ).fit(train)
    path = tmp_path / "model.json"
    m.save(path)
    with open(path) as fh:
        assert json.load(fh)["format_version"] == 1
    restored = TabularAttentionClassifier.load(path)
    np.testing.assert_array_equal(restored.predict_proba(train), m.predict_proba(train))


def test_get_params_is_sklearn_compatible():
    m = TabularAttentionClassifier(n_heads=4, epochs=123)
    params = m.get_params()
    assert params["n_heads"] == 4 and params["epochs"] == 123
    m.set_params(n_heads=8)
    assert m.n_heads == 8
