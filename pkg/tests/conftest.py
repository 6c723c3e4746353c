"""Shared fixtures: synthetic attention bundles with consistent geometry."""

from __future__ import annotations

import math

import numpy as np
import pytest

from attnfilter.bundle import AttentionBundle


def make_attentions(layers: int, heads: int, tokens: int, rng: np.random.Generator) -> np.ndarray:
    """Random row-stochastic float32 attention tensor [L, H, T, T]."""
    a = rng.random((layers, heads, tokens, tokens))
    a /= a.sum(axis=-1, keepdims=True)
    return a.astype(np.float32)


def make_bundle(
    layers: int = 2,
    heads: int = 2,
    tokens: int = 5,
    seed: int = 0,
    gradient_classes: tuple[int, ...] = (),
    class_count: int = 10,
    with_logits: bool = True,
    attentions: np.ndarray | None = None,
    gradients: dict | None = None,
) -> AttentionBundle:
    """Bundle with self-consistent geometry.

    When tokens - 1 is a perfect square, the image is a (16 * side)^2 square
    with 16-pixel patches, so the full pipeline (including CLS extraction and
    upsampling) works. Otherwise a 1 x N image with 1-pixel patches keeps the
    geometry invariant satisfied for algebra-only tests.
    """
    rng = np.random.default_rng(seed)
    n = tokens - 1
    side = math.isqrt(n)
    if side * side == n:
        patch_size = 16
        height = width = 16 * side
    else:
        patch_size = 1
        height, width = 1, n
    if attentions is None:
        attentions = make_attentions(layers, heads, tokens, rng)
    if gradients is None:
        gradients = {
            c: rng.standard_normal((layers, heads, tokens, tokens)).astype(np.float32)
            for c in gradient_classes
        }
    logits = rng.standard_normal(class_count).astype(np.float32) if with_logits else None
    return AttentionBundle(
        image_id=f"synthetic-{seed}",
        layers=layers,
        heads=heads,
        tokens=tokens,
        patch_size=patch_size,
        image_height=height,
        image_width=width,
        class_count=class_count,
        attentions=attentions,
        logits=logits,
        gradients=gradients,
    ).validate()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
