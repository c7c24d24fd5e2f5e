"""Attention fusion, classifier head, and loss behavior."""

import numpy as np
import pytest

from voxport import autodiff as ad
from voxport import fusion as fu
from voxport.autodiff import ParamStore, Tensor
from voxport.errors import InvalidArgumentError, ShapeError
from voxport.saliency import FeatureMap


def fmap(branch, data):
    return FeatureMap(branch, Tensor(np.asarray(data, dtype=np.float64)))


def fuse_store(width, seed=None):
    store = ParamStore()
    rng = np.random.default_rng(0 if seed is None else seed)
    fu.init_fusion_params(store, width, rng)
    if seed is None:
        for name, t in store.items():
            if name.startswith("fuse."):
                t.data[...] = 0.0
    return store


# ---------------------------------------------------------------------------
# attention_fuse
# ---------------------------------------------------------------------------


def test_identical_branches_same_weights_double_masked_value():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(10, 6))
    store = fuse_store(6, seed=2)
    store["fuse.w2.w"].data[...] = store["fuse.w1.w"].data
    store["fuse.w2.b"].data[...] = store["fuse.w1.b"].data
    out = fu.attention_fuse(
        fmap("F_S", x), fmap("F_T", x), store, "fuse.w1", "fuse.w2", "F_ST"
    )
    w, b = store["fuse.w1.w"].data, store["fuse.w1.b"].data
    scores = x @ w + b
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    mask = e / e.sum(axis=1, keepdims=True)
    assert np.allclose(out.data, 2 * mask * x, atol=1e-12)


def test_zero_weights_give_uniform_masks():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(8, 5)), rng.normal(size=(8, 5))
    store = fuse_store(5)
    out = fu.attention_fuse(
        fmap("F_S", a), fmap("F_T", b), store, "fuse.w1", "fuse.w2", "F_ST"
    )
    assert np.allclose(out.data, (a + b) / 5, atol=1e-12)


def test_fuse_matches_naive_formula():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    store = fuse_store(4, seed=5)
    out = fu.attention_fuse(
        fmap("F_S", a), fmap("F_T", b), store, "fuse.w1", "fuse.w2", "F_ST"
    )

    def mask(x, w, bias):
        s = x @ w + bias
        e = np.exp(s - s.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    expect = (
        mask(a, store["fuse.w1.w"].data, store["fuse.w1.b"].data) * a
        + mask(b, store["fuse.w2.w"].data, store["fuse.w2.b"].data) * b
    )
    assert np.allclose(out.data, expect, atol=1e-12)


def test_fuse_symmetric_under_branch_swap():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
    store = fuse_store(4, seed=7)
    ab = fu.attention_fuse(
        fmap("F_S", a), fmap("F_T", b), store, "fuse.w1", "fuse.w2", "F_ST"
    )
    ba = fu.attention_fuse(
        fmap("F_T", b), fmap("F_S", a), store, "fuse.w2", "fuse.w1", "F_ST"
    )
    assert np.allclose(ab.data, ba.data, atol=1e-12)


def test_fuse_masks_sum_to_one_per_point():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(20, 6)))
    store = fuse_store(6, seed=9)
    s = ad.softmax(ad.dense(x, store["fuse.w1.w"], store["fuse.w1.b"]), axis=-1)
    assert np.allclose(s.data.sum(axis=1), 1.0, atol=1e-9)


def test_fuse_shape_mismatch_rejected():
    store = fuse_store(4)
    with pytest.raises(ShapeError):
        fu.attention_fuse(
            fmap("F_S", np.zeros((5, 4))),
            fmap("F_T", np.zeros((6, 4))),
            store,
            "fuse.w1",
            "fuse.w2",
            "F_ST",
        )


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


def test_inference_is_deterministic_and_ties_go_to_class_zero():
    store = fuse_store(6, seed=10)
    for name, t in store.items():
        if name.startswith("head."):
            t.data[...] = 0.0
    x = fmap("F_E", np.random.default_rng(11).normal(size=(9, 6)))
    p1 = fu.classify(x, store, training=False)
    p2 = fu.classify(x, store, training=False)
    assert np.array_equal(p1.probabilities, p2.probabilities)
    assert np.allclose(p1.probabilities, 0.5)
    assert np.array_equal(p1.labels, np.zeros(9, dtype=np.uint8))


def test_classify_matches_layer_oracle():
    store = fuse_store(6, seed=12)
    x = np.random.default_rng(13).normal(size=(11, 6))
    pred = fu.classify(fmap("F_E", x), store, training=False)
    h = np.maximum(x @ store["head.1.w"].data + store["head.1.b"].data, 0)
    h = np.maximum(h @ store["head.2.w"].data + store["head.2.b"].data, 0)
    logits = h @ store["head.3.w"].data + store["head.3.b"].data
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    assert np.allclose(pred.probabilities, probs, atol=1e-12)
    assert pred.probabilities.shape == (11, 2)
    assert np.allclose(pred.probabilities.sum(axis=1), 1.0, atol=1e-9)


def test_training_dropout_reproducible_under_seed():
    store = fuse_store(6, seed=14)
    x = fmap("F_E", np.random.default_rng(15).normal(size=(30, 6)))
    a = fu.classify(x, store, training=True, rng=np.random.default_rng(7))
    b = fu.classify(x, store, training=True, rng=np.random.default_rng(7))
    c = fu.classify(x, store, training=True, rng=np.random.default_rng(8))
    assert np.array_equal(a.probabilities, b.probabilities)
    assert not np.array_equal(a.probabilities, c.probabilities)


def test_training_without_rng_rejected():
    store = fuse_store(4, seed=16)
    with pytest.raises(InvalidArgumentError):
        fu.classify(fmap("F_E", np.zeros((3, 4))), store, training=True)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_loss_uniform_balanced_is_ln2():
    logits = Tensor(np.zeros((12, 2)))
    labels = np.array([0, 1] * 6)
    assert fu.fusion_loss(logits, labels).item() == pytest.approx(
        np.log(2), abs=1e-9
    )


def test_loss_perfect_prediction_tiny():
    labels = np.array([0, 1, 1, 0, 1])
    logits = Tensor(np.where(np.eye(2)[labels] > 0, 50.0, -50.0))
    assert fu.fusion_loss(logits, labels).item() < 1e-9


def test_loss_length_mismatch_rejected():
    with pytest.raises(InvalidArgumentError):
        fu.fusion_loss(Tensor(np.zeros((3, 2))), np.zeros(4))


def test_class_weights_inverse_frequency():
    labels = np.array([0] * 30 + [1] * 10)
    w = fu.class_weights(labels)
    assert w[0] == pytest.approx(40 / 60)
    assert w[1] == pytest.approx(40 / 20)


def test_loss_gradient_matches_finite_differences():
    store = ParamStore()
    rng = np.random.default_rng(17)
    fu.init_fusion_params(store, 5, rng)
    x = rng.normal(size=(16, 5))
    labels = rng.integers(0, 2, size=16)

    def fn():
        logits = fu.head_logits(Tensor(x), store, training=False)
        return fu.fusion_loss(logits, labels)

    assert ad.grad_check(fn, store, sample_frac=0.2, seed=1) < 1e-4


def test_fuse_then_classify_end_to_end_grad_check():
    store = ParamStore()
    rng = np.random.default_rng(18)
    fu.init_fusion_params(store, 4, rng)
    a, b, c = (rng.normal(size=(10, 4)) for _ in range(3))
    labels = rng.integers(0, 2, size=10)

    def fn():
        f_st = fu.attention_fuse(
            fmap("F_S", a), fmap("F_T", b), store, "fuse.w1", "fuse.w2", "F_ST"
        )
        f_e = fu.attention_fuse(
            f_st, fmap("F_L", c), store, "fuse.w3", "fuse.w4", "F_E"
        )
        logits = fu.head_logits(f_e.tensor, store, training=False)
        return fu.fusion_loss(logits, labels)

    assert ad.grad_check(fn, store, sample_frac=0.2, seed=2) < 1e-4
