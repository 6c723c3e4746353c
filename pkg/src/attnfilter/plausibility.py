"""Plausibility metrics: agreement between a saliency map and gaze ground truth.

All statistics use the population convention (divide by n) for standard
deviations, matching the thresholding statistics of the explanation pipeline.
Inputs may be the typed map objects or plain 2-D arrays of the same shape;
resizing to a common resolution is the caller's job (see cli.evaluate, which
upsamples saliency to the gaze map's resolution before scoring).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, ShapeError
from .maps import FixationMap, GazeDensityMap, SaliencyMap

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

TOP_FRACTION = 0.05


@dataclass(frozen=True)
class PlausibilityScores:
    sim: float
    pcc: float
    auc_judd: float
    nss: float


def _grid(x) -> np.ndarray:
    if isinstance(x, SaliencyMap):
        return np.asarray(x.values, dtype=np.float64)
    if isinstance(x, GazeDensityMap):
        return np.asarray(x.density, dtype=np.float64)
    if isinstance(x, FixationMap):
        return np.asarray(x.fixations, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    ga, gb = _grid(a), _grid(b)
    if ga.shape != gb.shape:
        raise ShapeError(f"map shapes differ: {ga.shape} vs {gb.shape}")
    return ga, gb


def sim(s, g) -> float:
    """Histogram intersection of the two maps as probability distributions."""
    sv, gv = _paired(s, g)
    s_sum, g_sum = sv.sum(), gv.sum()
    if s_sum <= 0.0 or g_sum <= 0.0:
        raise DegenerateInput("similarity needs positive mass in both maps")
    return float(np.minimum(sv / s_sum, gv / g_sum).sum())


def pcc(s, g) -> float:
    """Pearson correlation between the two maps as flat random variables."""
    sv, gv = _paired(s, g)
    sd = sv - sv.mean()
    gd = gv - gv.mean()
    n = sv.size
    sigma_s = math.sqrt((sd * sd).sum() / n)
    sigma_g = math.sqrt((gd * gd).sum() / n)
    if sigma_s == 0.0 or sigma_g == 0.0:
        raise DegenerateInput("correlation undefined for constant maps")
    return float((sd * gd).sum() / n / (sigma_s * sigma_g))


def fixation_map(g, top_fraction: float = TOP_FRACTION) -> FixationMap:
    """Binarize a gaze density map by keeping its top fraction of pixels.

    Exactly ceil(top_fraction * H * W) pixels are marked; ties at the cut
    value are resolved in row-major order so the result is deterministic.
    """
    gv = _grid(g)
    if gv.sum() <= 0.0:
        raise DegenerateInput("fixation extraction needs positive mass")
    flat = gv.ravel()
    count = math.ceil(top_fraction * flat.size)
    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:count]] = True
    return FixationMap(fixations=mask.reshape(gv.shape), count=count)


def nss(s, f: FixationMap) -> float:
    """Mean of the standardized saliency map over the fixation pixels."""
    sv = _grid(s)
    fx = np.asarray(f.fixations, dtype=bool)
    if sv.shape != fx.shape:
        raise ShapeError(f"map shapes differ: {sv.shape} vs {fx.shape}")
    sigma = sv.std()
    if sigma == 0.0:
        raise DegenerateInput("NSS undefined for a constant saliency map")
    standardized = (sv - sv.mean()) / sigma
    return float(standardized[fx].mean())


def auc_judd(s, f: FixationMap) -> float:
    """ROC area treating fixation pixels as positives and saliency as the score.

    The ROC is swept over every distinct saliency value (plus a sentinel above
    the maximum) and integrated with the trapezoid rule, which resolves ties
    with half credit; the result equals the pairwise-comparison statistic
    P(s_fix > s_nonfix) + 0.5 * P(s_fix = s_nonfix).
    """
    sv = _grid(s)
    fx = np.asarray(f.fixations, dtype=bool)
    if sv.shape != fx.shape:
        raise ShapeError(f"map shapes differ: {sv.shape} vs {fx.shape}")
    n_fix = int(fx.sum())
    n_non = fx.size - n_fix
    if n_fix < 1 or n_non < 1:
        raise DegenerateInput("AUC needs both fixated and non-fixated pixels")
    fix_sorted = np.sort(sv[fx].ravel())
    non_sorted = np.sort(sv[~fx].ravel())
    thresholds = np.unique(sv)[::-1]
    # fraction of each population >= threshold, plus the (0, 0) sentinel point
    tpr = np.empty(thresholds.size + 1)
    fpr = np.empty(thresholds.size + 1)
    tpr[0] = fpr[0] = 0.0
    tpr[1:] = 1.0 - np.searchsorted(fix_sorted, thresholds, side="left") / n_fix
    fpr[1:] = 1.0 - np.searchsorted(non_sorted, thresholds, side="left") / n_non
    return float(_trapezoid(tpr, fpr))


def score_plausibility(s, g, top_fraction: float = TOP_FRACTION) -> PlausibilityScores:
    """All four gaze-agreement metrics for one saliency/gaze pair."""
    f = fixation_map(g, top_fraction)
    return PlausibilityScores(
        sim=sim(s, g), pcc=pcc(s, g), auc_judd=auc_judd(s, f), nss=nss(s, f)
    )
