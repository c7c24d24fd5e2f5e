"""Spatial and temporal saliency branches.

The spatial branch stacks five encoder levels, each a local-discrepancy
block (two rounds of neighborhood coding + attention pooling around a dense
residual shortcut) followed by random downsampling, then decodes back to
full resolution with nearest-neighbor upsampling and skip links.

The temporal branch compares mapped tiles of consecutive frames level by
level: global max-pooled features of both tiles feed a small MLP whose
scalar similarity score s becomes a motion intensity via
``G(s) = 1 / (1 + exp(s)) + 1``, in (1, 2), which scales the frame-t
features before they continue down the cascade.

Neighborhood geometry (KNN index sets, kept subsets, upsampling maps) is
precomputed once per tile into an :class:`EncoderPlan`; the differentiable
pass reuses it across training steps.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import InvalidArgumentError
from .knn import KnnIndex


@dataclass
class FeatureMap:
    """Per-point feature rows tagged with the branch they belong to."""

    branch: str
    tensor: Tensor

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


@dataclass(frozen=True)
class EncoderConfig:
    """Width cascade (input plus one width per level), neighbor count, and
    per-level keep ratios of the random downsampling."""

    widths: tuple = (8, 32, 128, 256, 512, 1024)
    k: int = 16
    rs_ratios: tuple = ((1, 4), (1, 4), (1, 4), (1, 4), (1, 2))

    @property
    def levels(self) -> int:
        return len(self.widths) - 1

    def level_counts(self, n: int) -> list[int]:
        counts = [n]
        for num, den in self.rs_ratios:
            counts.append(max(1, counts[-1] * num // den))
        return counts


# ---------------------------------------------------------------------------
# Core blocks
# ---------------------------------------------------------------------------


def initial_features(
    positions: np.ndarray,
    colors: np.ndarray,
    params: ParamStore,
    prefix: str = "init",
) -> Tensor:
    """Per-point embedding of position and [0,1]-scaled color."""
    raw = np.concatenate(
        [positions, np.asarray(colors, dtype=np.float64) / 255.0], axis=1
    )
    return ad.dense(Tensor(raw), params[f"{prefix}.w"], params[f"{prefix}.b"])


def neighborhood_descriptor(
    positions: np.ndarray, grays: np.ndarray, neighbor_idx: np.ndarray
) -> np.ndarray:
    """Relative-discrepancy descriptor of each (center, neighbor) pair.

    Concatenates center position, neighbor position, their difference, its
    norm, center gray, neighbor gray, their difference, and its absolute
    value: 14 columns. Pure geometry, no gradient flows through it.
    """
    n, k = neighbor_idx.shape
    p_i = np.broadcast_to(positions[:, None, :], (n, k, 3))
    p_k = positions[neighbor_idx]
    diff = p_i - p_k
    dist = np.linalg.norm(diff, axis=2, keepdims=True)
    d_i = np.broadcast_to(grays[:, None, None], (n, k, 1))
    d_k = grays[neighbor_idx][:, :, None]
    gdiff = d_i - d_k
    return np.concatenate(
        [p_i, p_k, diff, dist, d_i, d_k, gdiff, np.abs(gdiff)], axis=2
    )


DESCRIPTOR_WIDTH = 14


def neighborhood_encode(
    descriptor: np.ndarray,
    features: Tensor,
    neighbor_idx: np.ndarray,
    params: ParamStore,
    prefix: str,
) -> Tensor:
    """Enhanced neighbor set: encoded discrepancies joined with neighbor
    features; output width = encoding width + feature width."""
    if descriptor.shape[-1] != DESCRIPTOR_WIDTH:
        raise InvalidArgumentError(
            f"descriptor width {descriptor.shape[-1]} != {DESCRIPTOR_WIDTH}"
        )
    de = ad.dense(Tensor(descriptor), params[f"{prefix}.w"], params[f"{prefix}.b"])
    f_k = ad.gather_rows(features, neighbor_idx)
    return ad.concat([de, f_k], axis=2)


def attention_pool(enhanced: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Aggregate the K enhanced neighbor features of each point.

    Scores come from a shared linear map, are softmax-normalized across the
    neighbor axis per channel, and weight the features elementwise.
    """
    scores = ad.dense(enhanced, params[f"{prefix}.w"], params[f"{prefix}.b"])
    alpha = ad.softmax(scores, axis=1)
    return ad.reduce_sum(ad.mul(enhanced, alpha), axis=1)


def ldc_forward(
    positions: np.ndarray,
    grays: np.ndarray,
    features: Tensor,
    neighbor_idx: np.ndarray,
    params: ParamStore,
    prefix: str,
) -> Tensor:
    """One dilated residual block: two coding/pooling rounds reaching up to
    K^2-hop context, plus a dense shortcut, summed and leaky-activated."""
    descriptor = neighborhood_descriptor(positions, grays, neighbor_idx)
    enh1 = neighborhood_encode(descriptor, features, neighbor_idx, params, f"{prefix}.enc1")
    pooled1 = attention_pool(enh1, params, f"{prefix}.att1")
    mid = ad.dense(pooled1, params[f"{prefix}.mid.w"], params[f"{prefix}.mid.b"], "relu")
    enh2 = neighborhood_encode(descriptor, mid, neighbor_idx, params, f"{prefix}.enc2")
    pooled2 = attention_pool(enh2, params, f"{prefix}.att2")
    main = ad.dense(pooled2, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])
    shortcut = ad.dense(features, params[f"{prefix}.skip.w"], params[f"{prefix}.skip.b"])
    return ad.leaky_relu(ad.add(main, shortcut), 0.2)


def rs_keep(n: int, ratio: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Sorted kept-index subset for one random-downsampling step."""
    num, den = ratio
    m = max(1, n * num // den)
    if m < 1:
        raise InvalidArgumentError(f"keep ratio {ratio} empties a {n}-point set")
    return np.sort(rng.choice(n, size=m, replace=False))


def rs_downsample(points, features: Tensor, ratio, seed: int):
    """Random downsampling; returns (points', features', kept indices)."""
    rng = np.random.default_rng(seed)
    kept = rs_keep(len(points), ratio, rng)
    return points[kept], ad.gather_rows(features, kept), kept


def tc_forward(
    tc_t: Tensor, tc_prev: Tensor, params: ParamStore, prefix: str
) -> tuple[Tensor, Tensor]:
    """Temporal contrast of two mapped feature maps (row counts may differ).

    Returns ``(C_t, O_s)`` with ``C_t = O_s * tc_t`` and ``O_s`` in (1, 2),
    strictly decreasing in the similarity score.
    """
    if tc_t.data.shape[-1] != tc_prev.data.shape[-1]:
        raise InvalidArgumentError(
            f"feature widths differ: {tc_t.data.shape} vs {tc_prev.data.shape}"
        )
    q_t = ad.max_pool_global(tc_t)
    q_prev = ad.max_pool_global(tc_prev)
    joint = ad.concat([q_t, q_prev], axis=0)
    hidden = ad.dense(joint, params[f"{prefix}.sim1.w"], params[f"{prefix}.sim1.b"], "relu")
    s = ad.dense(hidden, params[f"{prefix}.sim2.w"], params[f"{prefix}.sim2.b"])
    o_s = ad.sigmoid(ad.neg(s)) + 1.0
    return ad.mul(tc_t, o_s), o_s


def temporal_intensity(s: float) -> float:
    """The operator G on a plain similarity score: 1 / (1 + exp(s)) + 1."""
    if s >= 0:
        return float(np.exp(-s) / (1.0 + np.exp(-s)) + 1.0)
    return float(1.0 / (1.0 + np.exp(s)) + 1.0)


# ---------------------------------------------------------------------------
# Geometry plans
# ---------------------------------------------------------------------------


@dataclass
class EncoderPlan:
    """Frozen per-tile geometry: level point subsets, KNN index sets for
    every block, and decoder nearest-neighbor upsampling maps."""

    level_positions: list[np.ndarray]
    level_grays: list[np.ndarray]
    neighbor_idx: list[np.ndarray]
    kept: list[np.ndarray]
    up_idx: list[np.ndarray]

    @property
    def level_counts(self) -> list[int]:
        return [p.shape[0] for p in self.level_positions]


def build_plan(
    positions: np.ndarray,
    grays: np.ndarray,
    cfg: EncoderConfig,
    seed: int,
    bypass_rs: bool = False,
) -> EncoderPlan:
    """Precompute all sampling-independent geometry for one tile."""
    level_positions = [np.ascontiguousarray(positions, dtype=np.float64)]
    level_grays = [np.asarray(grays, dtype=np.float64)]
    neighbor_idx, kept_lists, up_idx = [], [], []
    for c in range(cfg.levels):
        pts = level_positions[-1]
        n = pts.shape[0]
        k = min(cfg.k, n)
        neighbor_idx.append(KnnIndex(pts).query_many(pts, k))
        if bypass_rs:
            kept = np.arange(n)
        else:
            rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, c])
            kept = rs_keep(n, cfg.rs_ratios[c], rng)
        kept_lists.append(kept)
        level_positions.append(pts[kept])
        level_grays.append(level_grays[-1][kept])
        up_idx.append(
            KnnIndex(level_positions[-1]).query_many(pts, 1)[:, 0]
        )
    return EncoderPlan(level_positions, level_grays, neighbor_idx, kept_lists, up_idx)


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------


def init_ldc_level(store: ParamStore, prefix: str, d_in: int, d_out: int, rng) -> None:
    e = d_out // 2
    store.dense_init(f"{prefix}.enc1", DESCRIPTOR_WIDTH, e, rng)
    store.dense_init(f"{prefix}.att1", e + d_in, e + d_in, rng)
    store.dense_init(f"{prefix}.mid", e + d_in, e, rng)
    store.dense_init(f"{prefix}.enc2", DESCRIPTOR_WIDTH, e, rng)
    store.dense_init(f"{prefix}.att2", d_out, d_out, rng)
    store.dense_init(f"{prefix}.out", d_out, d_out, rng)
    store.dense_init(f"{prefix}.skip", d_in, d_out, rng)


def init_saliency_params(store: ParamStore, cfg: EncoderConfig, rng) -> None:
    """Encoder, temporal, and twin decoder parameters: ldc.<c>.*, tc.<c>.*,
    dec.<c>.spat.* and dec.<c>.temp.*."""
    store.dense_init("init", 6, cfg.widths[0], rng)
    for c in range(1, cfg.levels + 1):
        d_in, d_out = cfg.widths[c - 1], cfg.widths[c]
        init_ldc_level(store, f"ldc.{c}", d_in, d_out, rng)
        hidden = max(4, d_out // 4)
        store.dense_init(f"tc.{c}.sim1", 2 * d_out, hidden, rng)
        store.dense_init(f"tc.{c}.sim2", hidden, 1, rng)
        for branch in ("spat", "temp"):
            store.dense_init(f"dec.{c}.{branch}", 2 * d_out, cfg.widths[c - 1], rng)


# ---------------------------------------------------------------------------
# Encoder / decoder passes
# ---------------------------------------------------------------------------


@dataclass
class EncodedTile:
    """Skip features per level (at the level's input resolution), the
    downsampled per-level outputs, and the coarsest feature map."""

    skips: list[Tensor]
    level_feats: list[Tensor]
    final: Tensor


def encode_spatial(
    features0: Tensor, plan: EncoderPlan, params: ParamStore, cfg: EncoderConfig
) -> EncodedTile:
    skips, level_feats = [], []
    x = features0
    for c in range(1, cfg.levels + 1):
        e = ldc_forward(
            plan.level_positions[c - 1],
            plan.level_grays[c - 1],
            x,
            plan.neighbor_idx[c - 1],
            params,
            f"ldc.{c}",
        )
        skips.append(e)
        x = ad.gather_rows(e, plan.kept[c - 1])
        level_feats.append(x)
    return EncodedTile(skips, level_feats, x)


def encode_temporal(
    spatial_t: EncodedTile,
    prev_level_feats: list[Tensor],
    plan: EncoderPlan,
    params: ParamStore,
    cfg: EncoderConfig,
) -> tuple[EncodedTile, list[Tensor]]:
    """Temporal cascade for frame t against frame t-1's level features.

    Level 1 starts from both frames' first encodings; each later level
    applies the shared encoder block to the intensity-scaled features.
    """
    skips = [spatial_t.skips[0]]
    intensities = []
    x = spatial_t.level_feats[0]
    level_feats = [x]
    for c in range(1, cfg.levels + 1):
        x, o_s = tc_forward(x, prev_level_feats[c - 1], params, f"tc.{c}")
        intensities.append(o_s)
        if c < cfg.levels:
            e = ldc_forward(
                plan.level_positions[c],
                plan.level_grays[c],
                x,
                plan.neighbor_idx[c],
                params,
                f"ldc.{c + 1}",
            )
            skips.append(e)
            x = ad.gather_rows(e, plan.kept[c])
            level_feats.append(x)
    return EncodedTile(skips, level_feats, x), intensities


def decode(
    encoded: EncodedTile,
    plan: EncoderPlan,
    params: ParamStore,
    cfg: EncoderConfig,
    branch: str,
) -> Tensor:
    """Nearest-neighbor upsample, concatenate the skip, shared MLP; repeated
    from the coarsest level back to full resolution (width ``widths[0]``)."""
    x = encoded.final
    for c in range(cfg.levels, 0, -1):
        up = ad.gather_rows(x, plan.up_idx[c - 1])
        cat = ad.concat([up, encoded.skips[c - 1]], axis=1)
        act = "relu" if c > 1 else "none"
        x = ad.dense(
            cat, params[f"dec.{c}.{branch}.w"], params[f"dec.{c}.{branch}.b"], act
        )
    return x


def encode_pair(
    feats0_t: Tensor,
    feats0_prev: Tensor,
    plan_t: EncoderPlan,
    plan_prev: EncoderPlan,
    params: ParamStore,
    cfg: EncoderConfig,
) -> tuple[FeatureMap, FeatureMap, list[Tensor]]:
    """Full two-branch pass for a mapped tile pair: returns decoded spatial
    features F_S, temporal features F_T, and the per-level intensities."""
    spatial_t = encode_spatial(feats0_t, plan_t, params, cfg)
    spatial_prev = encode_spatial(feats0_prev, plan_prev, params, cfg)
    temporal_t, intensities = encode_temporal(
        spatial_t, spatial_prev.level_feats, plan_t, params, cfg
    )
    f_s = FeatureMap("F_S", decode(spatial_t, plan_t, params, cfg, "spat"))
    f_t = FeatureMap("F_T", decode(temporal_t, plan_t, params, cfg, "temp"))
    return f_s, f_t, intensities
