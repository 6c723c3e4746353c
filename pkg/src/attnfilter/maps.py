"""Dense 2-D map types: saliency maps, gaze density maps, fixation maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import npyio
from .errors import NumericError


@dataclass(frozen=True)
class SaliencyMap:
    """Per-pixel importance field, float32 values in [0, 1].

    ``non_degenerate`` is False when the map is constant (max == min), which
    happens e.g. when statistical filtering removes every attention value.
    """

    values: np.ndarray
    non_degenerate: bool

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, arr) -> "SaliencyMap":
        v = np.asarray(arr, dtype=np.float32)
        if v.ndim != 2:
            raise NumericError(f"saliency map must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise NumericError("saliency map contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise NumericError("saliency values must lie in [0, 1]")
        return cls(values=v, non_degenerate=bool(v.max() > v.min()))


@dataclass(frozen=True)
class GazeDensityMap:
    """Continuous human-attention ground truth; non-negative with positive mass."""

    density: np.ndarray  # float32 [H, W]

    @property
    def height(self) -> int:
        return self.density.shape[0]

    @property
    def width(self) -> int:
        return self.density.shape[1]

    @classmethod
    def from_array(cls, arr) -> "GazeDensityMap":
        d = np.asarray(arr, dtype=np.float32)
        if d.ndim != 2:
            raise NumericError(f"gaze density must be 2-D, got shape {d.shape}")
        if not np.isfinite(d).all() or d.min() < 0.0:
            raise NumericError("gaze density must be finite and non-negative")
        if not (d > 0.0).any():
            raise NumericError("gaze density must have at least one positive value")
        return cls(density=d)


@dataclass(frozen=True)
class FixationMap:
    """Binary fixation locations derived from a gaze density map."""

    fixations: np.ndarray  # bool [H, W]
    count: int

    @property
    def height(self) -> int:
        return self.fixations.shape[0]

    @property
    def width(self) -> int:
        return self.fixations.shape[1]

    @classmethod
    def from_array(cls, arr) -> "FixationMap":
        f = np.asarray(arr).astype(bool)
        if f.ndim != 2:
            raise NumericError(f"fixation map must be 2-D, got shape {f.shape}")
        count = int(f.sum())
        if count < 1:
            raise NumericError("fixation map must mark at least one pixel")
        return cls(fixations=f, count=count)


def save_saliency(path, saliency: SaliencyMap) -> None:
    npyio.write_tensor(path, np.asarray(saliency.values, np.float32))


def load_saliency(path) -> SaliencyMap:
    return SaliencyMap.from_array(npyio.read_tensor(path))


def load_gaze(path) -> GazeDensityMap:
    """Read a gaze density map from an NPY grid or an 8-bit grayscale PNG."""
    p = Path(path)
    if p.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(p) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
        return GazeDensityMap.from_array(arr)
    return GazeDensityMap.from_array(npyio.read_tensor(p))
