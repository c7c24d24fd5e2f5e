"""Saliency branches: coding, pooling, blocks, cascade, temporal contrast."""

import numpy as np
import pytest

from voxport import autodiff as ad
from voxport import saliency as sal
from voxport.autodiff import ParamStore, Tensor
from voxport.frames import grays_of

TOY = sal.EncoderConfig(widths=(8, 16, 32, 64, 128, 256))


def toy_points(n, seed=0):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 1, size=(n, 3))
    col = rng.integers(0, 256, size=(n, 3), dtype=np.uint8)
    return pos, col, grays_of(col)


def zero_store_like(store: ParamStore) -> None:
    for _, t in store.items():
        t.data[...] = 0.0


# ---------------------------------------------------------------------------
# initial features
# ---------------------------------------------------------------------------


def test_initial_features_zero_params_zero_output():
    pos, col, _ = toy_points(40)
    store = ParamStore()
    store.add("init.w", np.zeros((6, 8)))
    store.add("init.b", np.zeros(8))
    out = sal.initial_features(pos, col, store)
    assert out.shape == (40, 8)
    assert np.array_equal(out.data, np.zeros((40, 8)))


def test_initial_features_identity_block_passes_inputs():
    pos, col, _ = toy_points(25, seed=1)
    w = np.zeros((6, 8))
    w[:6, :6] = np.eye(6)
    store = ParamStore()
    store.add("init.w", w)
    store.add("init.b", np.zeros(8))
    out = sal.initial_features(pos, col, store).data
    assert np.allclose(out[:, :3], pos)
    assert np.allclose(out[:, 3:6], col / 255.0)
    assert np.array_equal(out[:, 6:], np.zeros((25, 2)))


# ---------------------------------------------------------------------------
# neighborhood coding
# ---------------------------------------------------------------------------


def test_descriptor_width_is_14():
    pos, _, gray = toy_points(30, seed=2)
    idx = np.random.default_rng(0).integers(0, 30, size=(30, 5))
    desc = sal.neighborhood_descriptor(pos, gray, idx)
    assert desc.shape == (30, 5, 14)


def test_descriptor_self_neighbor_zeroes_difference_slots():
    pos, _, gray = toy_points(10, seed=3)
    idx = np.tile(np.arange(10)[:, None], (1, 1))  # each point's neighbor = itself
    desc = sal.neighborhood_descriptor(pos, gray, idx)
    assert np.array_equal(desc[:, :, 6:10], np.zeros((10, 1, 4)))  # pos diff + norm
    assert np.array_equal(desc[:, :, 12:14], np.zeros((10, 1, 2)))  # gray diff + abs


def test_zero_weight_mlp_gives_bias_plus_feature_suffix():
    pos, _, gray = toy_points(12, seed=4)
    idx = np.random.default_rng(1).integers(0, 12, size=(12, 4))
    desc = sal.neighborhood_descriptor(pos, gray, idx)
    feats = Tensor(np.random.default_rng(2).normal(size=(12, 6)))
    store = ParamStore()
    store.add("enc.w", np.zeros((14, 5)))
    bias = np.arange(5.0)
    store.add("enc.b", bias)
    out = sal.neighborhood_encode(desc, feats, idx, store, "enc")
    assert out.shape == (12, 4, 11)
    assert np.allclose(out.data[:, :, :5], np.broadcast_to(bias, (12, 4, 5)))
    assert np.allclose(out.data[:, :, 5:], feats.data[idx])


# ---------------------------------------------------------------------------
# attention pooling
# ---------------------------------------------------------------------------


def att_store(d, seed=None):
    store = ParamStore()
    if seed is None:
        store.add("att.w", np.zeros((d, d)))
        store.add("att.b", np.zeros(d))
    else:
        rng = np.random.default_rng(seed)
        store.add("att.w", rng.normal(size=(d, d)))
        store.add("att.b", rng.normal(size=d))
    return store


def test_attention_pool_single_neighbor_is_identity():
    enh = Tensor(np.random.default_rng(5).normal(size=(7, 1, 6)))
    out = sal.attention_pool(enh, att_store(6, seed=9), "att")
    assert np.allclose(out.data, enh.data[:, 0, :], atol=1e-12)


def test_attention_pool_zero_weights_is_mean():
    enh = Tensor(np.random.default_rng(6).normal(size=(9, 8, 5)))
    out = sal.attention_pool(enh, att_store(5), "att")
    assert np.allclose(out.data, enh.data.mean(axis=1), atol=1e-12)


def test_attention_pool_matches_naive_formula():
    rng = np.random.default_rng(7)
    enh = rng.normal(size=(4, 8, 6))
    store = att_store(6, seed=11)
    out = sal.attention_pool(Tensor(enh), store, "att")
    w, b = store["att.w"].data, store["att.b"].data
    for i in range(4):
        scores = enh[i] @ w + b
        e = np.exp(scores - scores.max(axis=0))
        alpha = e / e.sum(axis=0)
        assert np.allclose(out.data[i], (enh[i] * alpha).sum(axis=0), atol=1e-12)


# ---------------------------------------------------------------------------
# LDC block
# ---------------------------------------------------------------------------


def ldc_fixture(n=24, k=4, d_in=6, d_out=8, seed=8):
    pos, _, gray = toy_points(n, seed=seed)
    rng = np.random.default_rng(seed + 1)
    idx = np.argsort(
        ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1), axis=1
    )[:, :k]
    feats = Tensor(rng.normal(size=(n, d_in)))
    store = ParamStore()
    sal.init_ldc_level(store, "ldc.1", d_in, d_out, rng)
    return pos, gray, feats, idx, store


def test_ldc_output_width_matches_level_target():
    pos, gray, feats, idx, store = ldc_fixture()
    out = sal.ldc_forward(pos, gray, feats, idx, store, "ldc.1")
    assert out.shape == (24, 8)
    assert np.isfinite(out.data).all()


def test_ldc_zero_rounds_identity_shortcut():
    pos, gray, feats, idx, store = ldc_fixture(d_in=8, d_out=8)
    zero_store_like(store)
    store["ldc.1.skip.w"].data[...] = np.eye(8)
    out = sal.ldc_forward(pos, gray, feats, idx, store, "ldc.1")
    expect = np.where(feats.data > 0, feats.data, 0.2 * feats.data)
    assert np.allclose(out.data, expect, atol=1e-12)


def test_ldc_grad_check():
    pos, gray, feats, idx, store = ldc_fixture(n=12, k=3, d_in=4, d_out=6)

    def fn():
        out = sal.ldc_forward(pos, gray, feats, idx, store, "ldc.1")
        return ad.reduce_mean(ad.mul(out, out))

    assert ad.grad_check(fn, store, sample_frac=0.3, seed=1) < 1e-4


# ---------------------------------------------------------------------------
# random downsampling
# ---------------------------------------------------------------------------


def test_rs_cascade_counts_paper_scale():
    cfg = sal.EncoderConfig()
    assert cfg.level_counts(12288) == [12288, 3072, 768, 192, 48, 24]


def test_rs_level5_ratio_half():
    rng = np.random.default_rng(10)
    kept = sal.rs_keep(48, (1, 2), rng)
    assert kept.shape == (24,)
    assert np.unique(kept).size == 24


def test_rs_downsample_seeded_identical():
    pos, _, _ = toy_points(64, seed=11)
    feats = Tensor(np.random.default_rng(12).normal(size=(64, 5)))
    a = sal.rs_downsample(pos, feats, (1, 4), seed=3)
    b = sal.rs_downsample(pos, feats, (1, 4), seed=3)
    assert np.array_equal(a[2], b[2])
    assert np.array_equal(a[0], b[0])
    assert a[2].shape == (16,)


# ---------------------------------------------------------------------------
# temporal contrast
# ---------------------------------------------------------------------------


def tc_store(d, hidden=4, seed=None):
    store = ParamStore()
    if seed is None:
        store.add("tc.1.sim1.w", np.zeros((2 * d, hidden)))
        store.add("tc.1.sim1.b", np.zeros(hidden))
        store.add("tc.1.sim2.w", np.zeros((hidden, 1)))
        store.add("tc.1.sim2.b", np.zeros(1))
    else:
        rng = np.random.default_rng(seed)
        store.dense_init("tc.1.sim1", 2 * d, hidden, rng)
        store.dense_init("tc.1.sim2", hidden, 1, rng)
    return store


def test_tc_zero_params_intensity_is_exactly_1_5():
    rng = np.random.default_rng(13)
    a, b = Tensor(rng.normal(size=(20, 6))), Tensor(rng.normal(size=(15, 6)))
    c_t, o_s = sal.tc_forward(a, b, tc_store(6), "tc.1")
    assert o_s.data[0] == 1.5
    assert np.allclose(c_t.data, 1.5 * a.data, atol=1e-15)


def test_tc_intensity_limits():
    assert sal.temporal_intensity(1000.0) == pytest.approx(1.0, abs=1e-12)
    assert sal.temporal_intensity(-1000.0) == pytest.approx(2.0, abs=1e-12)
    assert sal.temporal_intensity(0.0) == 1.5


def test_tc_intensity_strictly_decreasing_on_grid():
    grid = np.linspace(-30, 30, 100)
    vals = [sal.temporal_intensity(s) for s in grid]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert all(1.0 < v < 2.0 for v in vals)


def test_tc_width_mismatch_rejected():
    from voxport.errors import InvalidArgumentError

    with pytest.raises(InvalidArgumentError):
        sal.tc_forward(
            Tensor(np.zeros((4, 5))), Tensor(np.zeros((4, 6))), tc_store(5), "tc.1"
        )


def test_tc_grad_check():
    rng = np.random.default_rng(14)
    a, b = Tensor(rng.normal(size=(10, 6))), Tensor(rng.normal(size=(8, 6)))
    store = tc_store(6, seed=15)

    def fn():
        c_t, _ = sal.tc_forward(a, b, store, "tc.1")
        return ad.reduce_mean(ad.mul(c_t, c_t))

    assert ad.grad_check(fn, store, sample_frac=1.0) < 1e-4


# ---------------------------------------------------------------------------
# full cascade
# ---------------------------------------------------------------------------


def encode_fixture(n=256, seed=20, cfg=TOY, bypass_rs=False):
    pos, col, gray = toy_points(n, seed=seed)
    plan = sal.build_plan(pos, gray, cfg, seed=seed, bypass_rs=bypass_rs)
    store = ParamStore()
    sal.init_saliency_params(store, cfg, np.random.default_rng(seed + 1))
    feats0 = sal.initial_features(pos, col, store)
    return pos, col, plan, store, feats0


def test_encoder_counts_and_widths_toy():
    _, _, plan, store, feats0 = encode_fixture(n=256)
    enc = sal.encode_spatial(feats0, plan, store, TOY)
    assert plan.level_counts == [256, 64, 16, 4, 1, 1]
    widths = [s.shape[-1] for s in enc.skips]
    assert widths == [16, 32, 64, 128, 256]
    assert enc.final.shape[-1] == 256


def test_decode_restores_full_resolution():
    _, _, plan, store, feats0 = encode_fixture(n=256)
    enc = sal.encode_spatial(feats0, plan, store, TOY)
    out = sal.decode(enc, plan, store, TOY, "spat")
    assert out.shape == (256, 8)
    assert np.isfinite(out.data).all()


def test_single_coarse_point_broadcasts_to_all_fine_points():
    cfg = sal.EncoderConfig(widths=(4, 6), rs_ratios=((1, 8),), k=4)
    pos, col, gray = toy_points(8, seed=21)
    plan = sal.build_plan(pos, gray, cfg, seed=0)
    assert plan.level_counts == [8, 1]
    assert np.array_equal(plan.up_idx[0], np.zeros(8, dtype=np.int64))
    store = ParamStore()
    sal.init_saliency_params(store, cfg, np.random.default_rng(1))
    feats0 = sal.initial_features(pos, col, store)
    enc = sal.encode_spatial(feats0, plan, store, cfg)
    up = enc.final.data[plan.up_idx[0]]
    assert np.allclose(up, np.tile(enc.final.data[0], (8, 1)))


def test_identical_frames_zero_tc_params_all_intensities_1_5():
    pos, col, gray = toy_points(128, seed=22)
    plan = sal.build_plan(pos, gray, TOY, seed=5)
    store = ParamStore()
    sal.init_saliency_params(store, TOY, np.random.default_rng(23))
    for name, t in store.items():
        if name.startswith("tc."):
            t.data[...] = 0.0
    feats0 = sal.initial_features(pos, col, store)
    _, _, intensities = sal.encode_pair(feats0, feats0, plan, plan, store, TOY)
    assert len(intensities) == 5
    for o_s in intensities:
        assert o_s.data[0] == 1.5


def test_permutation_consistency_rs_bypassed():
    cfg = sal.EncoderConfig(widths=(8, 12, 16), rs_ratios=((1, 1), (1, 1)), k=4)
    n = 40
    pos, col, gray = toy_points(n, seed=24)
    store = ParamStore()
    sal.init_saliency_params(store, cfg, np.random.default_rng(25))

    def run(p, c, g):
        plan = sal.build_plan(p, g, cfg, seed=0, bypass_rs=True)
        f0 = sal.initial_features(p, c, store)
        enc = sal.encode_spatial(f0, plan, store, cfg)
        return sal.decode(enc, plan, store, cfg, "spat").data

    base = run(pos, col, gray)
    perm = np.random.default_rng(26).permutation(n)
    permuted = run(pos[perm], col[perm], gray[perm])
    assert np.allclose(permuted, base[perm], atol=1e-9)


def test_encode_pair_end_to_end_grad_check():
    cfg = sal.EncoderConfig(widths=(4, 8, 12), rs_ratios=((1, 2), (1, 2)), k=3)
    pos_t, col_t, gray_t = toy_points(16, seed=27)
    pos_p, col_p, gray_p = toy_points(16, seed=28)
    plan_t = sal.build_plan(pos_t, gray_t, cfg, seed=1)
    plan_p = sal.build_plan(pos_p, gray_p, cfg, seed=2)
    store = ParamStore()
    sal.init_saliency_params(store, cfg, np.random.default_rng(29))

    def fn():
        f0t = sal.initial_features(pos_t, col_t, store)
        f0p = sal.initial_features(pos_p, col_p, store)
        f_s, f_t, _ = sal.encode_pair(f0t, f0p, plan_t, plan_p, store, cfg)
        joint = ad.concat([f_s.tensor, f_t.tensor], axis=1)
        return ad.reduce_mean(ad.mul(joint, joint))

    assert ad.grad_check(fn, store, sample_frac=0.05, seed=3) < 1e-4
