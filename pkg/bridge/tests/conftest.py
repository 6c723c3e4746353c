"""Shared fixtures: one hooked model per session (construction is expensive)."""

import numpy as np
import pytest

from vitbridge.model import HookedViT


@pytest.fixture(scope="session")
def model() -> HookedViT:
    return HookedViT(weights="random", seed=0)


@pytest.fixture
def image() -> np.ndarray:
    rng = np.random.default_rng(42)
    return (rng.standard_normal((3, 224, 224)) * 0.25).astype(np.float32)


def make_test_png(path) -> None:
    """Synthetic photo-like image: gradient background with two shapes."""
    from PIL import Image, ImageDraw

    base = np.linspace(40, 215, 256, dtype=np.uint8)
    arr = np.stack(
        [
            np.tile(base, (256, 1)),
            np.tile(base[::-1], (256, 1)).T,
            np.full((256, 256), 128, dtype=np.uint8),
        ],
        axis=2,
    )
    img = Image.fromarray(arr)
    draw = ImageDraw.Draw(img)
    draw.ellipse((60, 70, 160, 170), fill=(200, 60, 40))
    draw.rectangle((170, 150, 230, 230), fill=(30, 160, 90))
    img.save(path)
