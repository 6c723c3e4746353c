"""Correctness metrics driven by a scoring oracle.

Deletion curves progressively replace pixels with a baseline value, ordered
either most-relevant-first ("morf") or least-relevant-first ("lerf");
insertion curves reveal pixels into an all-baseline image. The gap between
the LeRF and MoRF deletion areas summarizes how much the ranking matters.

The oracle is anything with a ``score(image) -> probabilities`` method (an
oracle_client session qualifies) or a bare callable. Images are float32
[C, H, W]; the baseline may be a scalar or one value per channel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, OracleError, ShapeError
from .maps import SaliencyMap
from .resample import bilinear_resize, minmax_normalize

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

DEFAULT_STEP_PIXELS = 50

MORF = "morf"
LERF = "lerf"


@dataclass(frozen=True)
class PerturbationCurve:
    """Model score as a function of the fraction of pixels perturbed."""

    fractions: np.ndarray  # strictly increasing, 0 .. 1
    scores: np.ndarray
    order: str  # "morf" | "lerf"
    mode: str  # "deletion" | "insertion"


@dataclass(frozen=True)
class CorrectnessScores:
    iauc: float
    dauc: float
    ad: float
    ai: float
    ag: float
    delta_a_f: float


def _saliency_values(s) -> np.ndarray:
    v = s.values if isinstance(s, SaliencyMap) else s
    return np.asarray(v, dtype=np.float64)


def _score_fn(oracle):
    fn = oracle.score if hasattr(oracle, "score") else oracle
    if not callable(fn):
        raise OracleError(f"oracle {oracle!r} is neither callable nor has .score")
    return fn


def _class_score(fn, image: np.ndarray, class_id: int) -> float:
    try:
        result = fn(image)
    except OracleError:
        raise
    except Exception as exc:
        raise OracleError(f"oracle call failed: {exc}") from exc
    result = np.asarray(result, dtype=np.float64)
    return float(result) if result.ndim == 0 else float(result.reshape(-1)[class_id])


def _as_chw(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ShapeError(f"image must be [C, H, W], got shape {img.shape}")
    return img


def pixel_ranking(s) -> np.ndarray:
    """Flat pixel indices sorted by saliency, highest first, row-major ties."""
    flat = _saliency_values(s).ravel()
    return np.argsort(-flat, kind="stable")


def masking_schedule(total_pixels: int, step_pixels: int = DEFAULT_STEP_PIXELS) -> np.ndarray:
    """Cumulative pixel counts 0, step, 2*step, ..., total (last step partial)."""
    if step_pixels < 1:
        raise ShapeError(f"step_pixels must be >= 1, got {step_pixels}")
    counts = list(range(0, total_pixels + 1, step_pixels))
    if counts[-1] != total_pixels:
        counts.append(total_pixels)
    return np.asarray(counts, dtype=np.int64)


def steps_to_pixels(total_pixels: int, n_steps: int) -> int:
    """Step size in pixels for a budget of roughly n_steps oracle calls."""
    if n_steps < 1:
        raise ShapeError(f"n_steps must be >= 1, got {n_steps}")
    return max(1, math.ceil(total_pixels / n_steps))


def _baseline_column(baseline_value, channels: int) -> np.ndarray:
    b = np.asarray(baseline_value, dtype=np.float32).reshape(-1)
    if b.size == 1:
        b = np.repeat(b, channels)
    if b.size != channels:
        raise ShapeError(f"baseline has {b.size} values for {channels} channels")
    return b[:, None]


def _perturbation_curve(
    image, s, class_id, oracle, order, baseline_value, step_pixels, mode
) -> PerturbationCurve:
    img = _as_chw(image)
    sal = _saliency_values(s)
    if sal.shape != img.shape[1:]:
        raise ShapeError(f"saliency shape {sal.shape} != image plane {img.shape[1:]}")
    order = order.lower()
    if order not in (MORF, LERF):
        raise ShapeError(f"order must be 'morf' or 'lerf', got {order!r}")
    fn = _score_fn(oracle)
    ranking = pixel_ranking(sal)
    if order == LERF:
        ranking = ranking[::-1]  # consume the fixed ranking from the bottom
    total = sal.size
    schedule = masking_schedule(total, step_pixels)
    baseline = _baseline_column(baseline_value, img.shape[0])

    if mode == "deletion":
        current = img.copy()
    else:
        current = np.broadcast_to(baseline[:, :, None], img.shape).astype(np.float32).copy()
    rows, cols = np.unravel_index(ranking, sal.shape)
    scores = []
    prev = 0
    for k in schedule:
        sel = slice(prev, k)
        if mode == "deletion":
            current[:, rows[sel], cols[sel]] = baseline
        else:
            current[:, rows[sel], cols[sel]] = img[:, rows[sel], cols[sel]]
        prev = k
        scores.append(_class_score(fn, current, class_id))
    return PerturbationCurve(
        fractions=schedule / total, scores=np.asarray(scores), order=order, mode=mode
    )


def deletion_curve(
    image,
    s,
    class_id: int,
    oracle,
    order: str = MORF,
    baseline_value=0.0,
    step_pixels: int = DEFAULT_STEP_PIXELS,
) -> PerturbationCurve:
    """Replace ranked pixels with the baseline, scoring after every step."""
    return _perturbation_curve(
        image, s, class_id, oracle, order, baseline_value, step_pixels, "deletion"
    )


def insertion_curve(
    image,
    s,
    class_id: int,
    oracle,
    order: str = MORF,
    baseline_value=0.0,
    step_pixels: int = DEFAULT_STEP_PIXELS,
) -> PerturbationCurve:
    """Reveal ranked pixels into an all-baseline image, scoring every step."""
    return _perturbation_curve(
        image, s, class_id, oracle, order, baseline_value, step_pixels, "insertion"
    )


def auc_of_curve(curve: PerturbationCurve) -> float:
    """Trapezoidal area under the curve over the fraction axis."""
    if curve.fractions.size < 2:
        raise ShapeError("need at least two curve points")
    return float(_trapezoid(curve.scores, curve.fractions))


def delta_a_f(
    image,
    s,
    class_id: int,
    oracle,
    baseline_value=0.0,
    step_pixels: int = DEFAULT_STEP_PIXELS,
) -> float:
    """LeRF-minus-MoRF gap of the deletion areas; positive for useful rankings."""
    lerf = deletion_curve(image, s, class_id, oracle, LERF, baseline_value, step_pixels)
    morf = deletion_curve(image, s, class_id, oracle, MORF, baseline_value, step_pixels)
    return auc_of_curve(lerf) - auc_of_curve(morf)


def average_drop(pairs) -> float:
    """Mean relative confidence loss max(0, p - o) / p over (p, o) pairs."""
    terms = []
    for p, o in pairs:
        if p <= 0.0:
            warnings.warn(f"average_drop: skipping sample with p={p}", stacklevel=2)
            continue
        terms.append(max(0.0, p - o) / p)
    if not terms:
        raise DegenerateInput("average_drop: no valid samples")
    return float(np.mean(terms))


def average_increase(pairs) -> float:
    """Fraction of samples whose masked confidence exceeds the original."""
    flags = [1.0 if o > p else 0.0 for p, o in pairs]
    if not flags:
        raise DegenerateInput("average_increase: no samples")
    return float(np.mean(flags))


def average_gain(pairs) -> float:
    """Mean relative confidence gain max(0, o - p) / (1 - p) over (p, o) pairs."""
    terms = []
    for p, o in pairs:
        if p >= 1.0:
            warnings.warn(f"average_gain: skipping sample with p={p}", stacklevel=2)
            continue
        terms.append(max(0.0, o - p) / (1.0 - p))
    if not terms:
        raise DegenerateInput("average_gain: no valid samples")
    return float(np.mean(terms))


def explanation_support_mask(s, threshold: float = 0.5) -> np.ndarray:
    """Boolean keep-mask: pixels whose min-max-normalized saliency >= threshold."""
    normalized, non_degenerate = minmax_normalize(_saliency_values(s))
    if not non_degenerate:
        return np.zeros(normalized.shape, dtype=bool)
    return normalized >= threshold


def masked_confidence_pair(
    image, s, class_id: int, oracle, baseline_value=0.0, threshold: float = 0.5
) -> tuple[float, float]:
    """(p, o): class confidence on the intact image and on the image reduced
    to the explanation's support (everything else set to the baseline)."""
    img = _as_chw(image)
    sal = _saliency_values(s)
    if sal.shape != img.shape[1:]:
        raise ShapeError(f"saliency shape {sal.shape} != image plane {img.shape[1:]}")
    fn = _score_fn(oracle)
    keep = explanation_support_mask(sal, threshold)
    masked = img.copy()
    drop_rows, drop_cols = np.nonzero(~keep)
    masked[:, drop_rows, drop_cols] = _baseline_column(baseline_value, img.shape[0])
    p = _class_score(fn, img, class_id)
    o = _class_score(fn, masked, class_id)
    return p, o


def random_baseline_map(height: int, width: int, seed: int) -> SaliencyMap:
    """I.i.d. uniform [0, 1) saliency; the chance-level reference map."""
    rng = np.random.default_rng(seed)
    return SaliencyMap.from_array(rng.random((height, width)).astype(np.float32))


def cb_cam_map(height: int, width: int) -> SaliencyMap:
    """Centre-biased reference map: a 7x7 one-hot at the centre, upsampled."""
    grid = np.zeros((7, 7))
    grid[3, 3] = 1.0
    resized = bilinear_resize(grid, height, width)
    normalized, non_degenerate = minmax_normalize(resized)
    return SaliencyMap(values=normalized.astype(np.float32), non_degenerate=non_degenerate)
