"""Explanation maps from exported ViT attention tensors.

All pipelines share one skeleton: augment each layer's attention with the
identity matrix (skip connections) and re-normalize rows, multiply the layer
matrices newest-first, take the classification-token query row, and upsample
the resulting patch grid to pixel resolution. The statistically filtered
variants additionally keep each head separate through the product, binarize
each head's aggregate with a mean + K*sigma threshold, and recombine the
binary maps weighted by the head's strongest response.

Internal math is float64 (products of 12 row-stochastic matrices lose
visible precision in float32); emitted maps are float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bundle import AttentionBundle
from .errors import GeometryError, GradientMissing, NumericError, ShapeError
from .maps import SaliencyMap
from .resample import bilinear_resize, minmax_normalize

WEIGHT_SCOPES = ("matrix", "cls-row")


@dataclass(frozen=True)
class HeadAggregate:
    """Per-head layer-aggregated attention and the per-head combination weights."""

    per_head: np.ndarray  # float64 [H, T, T]
    weights: np.ndarray  # float64 [H], max entry of each head's aggregate


@dataclass(frozen=True)
class FilteredHeads:
    """Binary per-head maps from mean + K*sigma thresholding."""

    binary: np.ndarray  # bool [H, T, T]
    mu: np.ndarray  # float64 [H]
    sigma: np.ndarray  # float64 [H]
    k: float


@dataclass(frozen=True)
class PatchGrid:
    """Square grid of per-patch importances (the CLS query row, reshaped)."""

    values: np.ndarray  # float64 [side, side]

    @property
    def side(self) -> int:
        return self.values.shape[0]


def _row_normalize(m: np.ndarray) -> np.ndarray:
    """Divide each row by its sum, leaving (near-)zero-sum rows untouched."""
    sums = m.sum(axis=-1, keepdims=True)
    safe = np.where(np.abs(sums) < 1e-12, 1.0, sums)
    return m / safe


def augment_with_identity(a) -> np.ndarray:
    """Row-normalized (a + I): models skip connections, keeps rows stochastic."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NumericError("attention matrix contains non-finite values")
    m = m + np.eye(m.shape[0])
    return _row_normalize(m)


def grad_modulate(a, g, clamp_negative: bool = False) -> np.ndarray:
    """Elementwise product of attention and its class gradient, plus identity.

    No clamping by default; the product of signed matrices can then leave the
    row-stochastic regime, which the downstream row normalization absorbs.
    """
    a = np.asarray(a, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if a.shape != g.shape:
        raise ShapeError(f"attention shape {a.shape} != gradient shape {g.shape}")
    prod = a * g
    if clamp_negative:
        prod = np.maximum(prod, 0.0)
    return prod + np.eye(a.shape[-1])


def _augmented_layer(
    bundle: AttentionBundle, layer: int, class_id: int | None, clamp_negative: bool
) -> np.ndarray:
    """Float64 [H, T, T] matrix for one layer, augmented and row-normalized."""
    a = bundle.attentions[layer].astype(np.float64)
    if class_id is None:
        m = a + np.eye(bundle.tokens)
    else:
        m = grad_modulate(a, bundle.gradients[class_id][layer], clamp_negative)
    return _row_normalize(m)


def per_head_rollout(
    bundle: AttentionBundle, class_id: int | None = None, clamp_negative: bool = False
) -> HeadAggregate:
    """Chain the augmented attention matrices of every layer, head by head.

    The product runs newest layer first (aggregate = M_L @ ... @ M_1). With a
    ``class_id``, each layer is gradient-modulated before augmentation, which
    makes the aggregate class-specific. Weights are the max entry per head.
    """
    if class_id is not None and class_id not in bundle.gradients:
        raise GradientMissing(
            f"{bundle.image_id}: no gradients for class {class_id} "
            f"(available: {sorted(bundle.gradients)})"
        )
    acc = _augmented_layer(bundle, bundle.layers - 1, class_id, clamp_negative)
    buf = np.empty_like(acc)
    for layer in range(bundle.layers - 2, -1, -1):
        np.matmul(acc, _augmented_layer(bundle, layer, class_id, clamp_negative), out=buf)
        acc, buf = buf, acc
    flat = acc.reshape(bundle.heads, -1)
    return HeadAggregate(per_head=acc, weights=flat.max(axis=1))


def ksigma_filter(agg: HeadAggregate, k: float) -> FilteredHeads:
    """Keep, per head, the entries at least K standard deviations above the mean.

    Statistics are the mean and population standard deviation over all T*T
    entries of that head's aggregate. A constant head (sigma = 0) passes
    everywhere for K >= 0 because the comparison is >=.
    """
    per_head = agg.per_head
    if not np.isfinite(per_head).all():
        raise NumericError("head aggregate contains non-finite values")
    flat = per_head.reshape(per_head.shape[0], -1)
    mu = flat.mean(axis=1)
    sigma = flat.std(axis=1)
    thresholds = mu + k * sigma
    binary = per_head >= thresholds[:, None, None]
    return FilteredHeads(binary=binary, mu=mu, sigma=sigma, k=float(k))


def aggregate_heads(filtered, weights) -> np.ndarray:
    """Weighted sum of the per-head binary maps: sum_h w_h * B_h."""
    binary = filtered.binary if isinstance(filtered, FilteredHeads) else np.asarray(filtered)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != binary.shape[0]:
        raise ShapeError(f"{w.shape[0] if w.ndim == 1 else w.shape} weights for {binary.shape[0]} heads")
    return np.einsum("h,hij->ij", w, binary.astype(np.float64))


def extract_cls_map(m, bundle: AttentionBundle) -> PatchGrid:
    """CLS query row (minus its self-entry) reshaped to the square patch grid."""
    mat = np.asarray(m, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {mat.shape}")
    n = mat.shape[0] - 1
    side = math.isqrt(n)
    if side * side != n:
        raise GeometryError(f"{n} patch tokens do not form a square grid")
    if mat.shape[0] != bundle.tokens:
        raise ShapeError(f"matrix has {mat.shape[0]} tokens, bundle has {bundle.tokens}")
    return PatchGrid(values=mat[0, 1:].reshape(side, side).copy())


def to_saliency(grid: PatchGrid, height: int, width: int) -> SaliencyMap:
    """Bilinearly upsample a patch grid and min-max normalize it to [0, 1]."""
    if height < grid.side or width < grid.side:
        raise ShapeError(f"target {height}x{width} smaller than grid side {grid.side}")
    resized = bilinear_resize(grid.values, height, width)
    normalized, non_degenerate = minmax_normalize(resized)
    return SaliencyMap(values=normalized.astype(np.float32), non_degenerate=non_degenerate)


def _head_weights(agg: HeadAggregate, weight_scope: str) -> np.ndarray:
    if weight_scope == "matrix":
        return agg.weights
    if weight_scope == "cls-row":
        return agg.per_head[:, 0, :].max(axis=1)
    raise ValueError(f"weight_scope must be one of {WEIGHT_SCOPES}, got {weight_scope!r}")


def rfem(bundle: AttentionBundle, k: float = 1.0, weight_scope: str = "matrix") -> SaliencyMap:
    """Class-agnostic filtered-rollout map: per-head rollout, K-sigma
    binarization, max-weighted head sum, CLS-row extraction, upsampling."""
    agg = per_head_rollout(bundle)
    combined = aggregate_heads(ksigma_filter(agg, k), _head_weights(agg, weight_scope))
    grid = extract_cls_map(combined, bundle)
    return to_saliency(grid, bundle.image_height, bundle.image_width)


def rfem_class(
    bundle: AttentionBundle,
    class_id: int,
    k: float = 1.0,
    clamp_negative: bool = False,
    weight_scope: str = "matrix",
) -> SaliencyMap:
    """Class-specific variant: attentions are gradient-modulated per layer
    before rollout; the remaining stages match :func:`rfem` exactly."""
    agg = per_head_rollout(bundle, class_id=class_id, clamp_negative=clamp_negative)
    combined = aggregate_heads(ksigma_filter(agg, k), _head_weights(agg, weight_scope))
    grid = extract_cls_map(combined, bundle)
    return to_saliency(grid, bundle.image_height, bundle.image_width)


def rollout_baseline(bundle: AttentionBundle) -> SaliencyMap:
    """Plain attention rollout: mean over heads per layer, augment, chain."""
    acc = None
    for layer in range(bundle.layers - 1, -1, -1):
        m = augment_with_identity(bundle.attentions[layer].mean(axis=0, dtype=np.float64))
        acc = m if acc is None else acc @ m
    grid = extract_cls_map(acc, bundle)
    return to_saliency(grid, bundle.image_height, bundle.image_width)


def saw_baseline(
    bundle: AttentionBundle, class_id: int, clamp_negative: bool = True
) -> SaliencyMap:
    """Gradient-scaled rollout: per layer, head-mean of (attention * gradient),
    negatives clamped to zero, then the plain rollout chain."""
    if class_id not in bundle.gradients:
        raise GradientMissing(f"{bundle.image_id}: no gradients for class {class_id}")
    grads = bundle.gradients[class_id]
    acc = None
    for layer in range(bundle.layers - 1, -1, -1):
        scaled = bundle.attentions[layer].astype(np.float64) * grads[layer].astype(np.float64)
        mixed = scaled.mean(axis=0)
        if clamp_negative:
            mixed = np.maximum(mixed, 0.0)
        m = _row_normalize(mixed + np.eye(bundle.tokens))
        acc = m if acc is None else acc @ m
    grid = extract_cls_map(acc, bundle)
    return to_saliency(grid, bundle.image_height, bundle.image_width)


def gradcam_vit_baseline(
    bundle: AttentionBundle, class_id: int, clamp_negative: bool = True
) -> SaliencyMap:
    """Transformer-adapted GradCAM: last layer only, head-mean of the clamped
    attention-gradient product, CLS row extracted directly."""
    if class_id not in bundle.gradients:
        raise GradientMissing(f"{bundle.image_id}: no gradients for class {class_id}")
    last = bundle.layers - 1
    prod = bundle.attentions[last].astype(np.float64) * bundle.gradients[class_id][last].astype(
        np.float64
    )
    if clamp_negative:
        prod = np.maximum(prod, 0.0)
    grid = extract_cls_map(prod.mean(axis=0), bundle)
    return to_saliency(grid, bundle.image_height, bundle.image_width)
