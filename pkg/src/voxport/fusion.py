"""Attention fusion of feature branches and the classification head.

Two identical fusion stages: spatial with temporal features into F_ST, then
F_ST with the trajectory features F_L into F_E. Each branch gets a shared
linear score map, softmax-normalized per point across channels, and the
masked branches are summed. The head is three shared dense layers
(d -> 64 -> 32 -> 2) with seeded dropout between them in training mode.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import InvalidArgumentError, ShapeError
from .saliency import FeatureMap


def attention_fuse(
    a: FeatureMap, b: FeatureMap, params: ParamStore, wa: str, wb: str, branch: str
) -> FeatureMap:
    """Channelwise-softmax masked sum of two same-shape feature maps."""
    if a.tensor.data.shape != b.tensor.data.shape:
        raise ShapeError(
            f"fused maps must share a shape: {a.tensor.data.shape} vs "
            f"{b.tensor.data.shape}"
        )
    s_a = ad.softmax(ad.dense(a.tensor, params[f"{wa}.w"], params[f"{wa}.b"]), axis=-1)
    s_b = ad.softmax(ad.dense(b.tensor, params[f"{wb}.w"], params[f"{wb}.b"]), axis=-1)
    fused = ad.add(ad.mul(s_a, a.tensor), ad.mul(s_b, b.tensor))
    return FeatureMap(branch, fused)


@dataclass
class Prediction:
    """Per-point class probabilities, argmax labels (ties to class 0), and
    the branches that contributed."""

    probabilities: np.ndarray
    labels: np.ndarray
    provenance: tuple[str, ...] = field(default_factory=tuple)


def init_fusion_params(store: ParamStore, width: int, rng) -> None:
    for name in ("fuse.w1", "fuse.w2", "fuse.w3", "fuse.w4"):
        store.dense_init(name, width, width, rng)
    store.dense_init("head.1", width, 64, rng)
    store.dense_init("head.2", 64, 32, rng)
    store.dense_init("head.3", 32, 2, rng)


def head_logits(
    fused: Tensor,
    params: ParamStore,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
) -> Tensor:
    if training and rng is None:
        raise InvalidArgumentError("training mode needs a seeded rng for dropout")
    h = ad.dense(fused, params["head.1.w"], params["head.1.b"], "relu")
    h = ad.dropout(h, dropout_rate, rng, training)
    h = ad.dense(h, params["head.2.w"], params["head.2.b"], "relu")
    h = ad.dropout(h, dropout_rate, rng, training)
    return ad.dense(h, params["head.3.w"], params["head.3.b"])


def classify(
    fused: FeatureMap,
    params: ParamStore,
    training: bool = False,
    rng: np.random.Generator | None = None,
    provenance: tuple[str, ...] = (),
) -> Prediction:
    logits = head_logits(fused.tensor, params, training, rng)
    probs = ad.softmax(logits, axis=-1).data
    labels = np.argmax(probs, axis=-1).astype(np.uint8)  # tie -> class 0
    return Prediction(probs, labels, provenance)


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse class-frequency weights, normalized to mean 1 over classes."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    counts = np.array([(labels == 0).sum(), (labels == 1).sum()], dtype=np.float64)
    w = np.where(counts > 0, n / (2.0 * np.maximum(counts, 1)), 0.0)
    return w


def fusion_loss(
    logits: Tensor, gt_labels: np.ndarray, weights: np.ndarray | None = None
) -> Tensor:
    gt_labels = np.asarray(gt_labels, dtype=np.int64)
    if logits.data.shape[0] != gt_labels.shape[0]:
        raise InvalidArgumentError(
            f"prediction rows {logits.data.shape[0]} != labels {gt_labels.shape[0]}"
        )
    if weights is None:
        weights = class_weights(gt_labels)
    return ad.cross_entropy(logits, gt_labels, weights)
