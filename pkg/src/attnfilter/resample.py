"""Bilinear resampling and min-max normalization for 2-D grids.

Resampling uses half-pixel-center sample positions with edge clamping (the
same convention as OpenCV/torch ``align_corners=False``), implemented as two
sparse interpolation matrices so results are deterministic across platforms
and exactly mirror-symmetric for mirror-symmetric inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix [n_out, n_in]: each row holds the two bilinear taps."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    lo0 = np.clip(lo, 0, n_in - 1)
    lo1 = np.clip(lo + 1, 0, n_in - 1)
    w = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    w[rows, lo0] += 1.0 - frac
    w[rows, lo1] += frac
    return w


def bilinear_resize(values, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D grid to (out_h, out_w) with bilinear interpolation."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise NumericError(f"expected a 2-D grid, got shape {v.shape}")
    in_h, in_w = v.shape
    if (out_h, out_w) == (in_h, in_w):
        return v.copy()
    return _axis_weights(in_h, out_h) @ v @ _axis_weights(in_w, out_w).T


def minmax_normalize(values) -> tuple[np.ndarray, bool]:
    """Map a grid affinely onto [0, 1].

    Constant grids cannot be normalized; they map to all-zeros with the
    second return value (the non-degenerate flag) set to False.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise NumericError("cannot normalize non-finite values")
    lo = float(v.min())
    hi = float(v.max())
    if hi > lo:
        return (v - lo) / (hi - lo), True
    return np.zeros_like(v), False
