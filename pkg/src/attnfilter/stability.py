"""Explanation-stability metrics over perturbation neighborhoods.

Both metrics sample inputs uniformly from an L2 ball of radius epsilon
around the anchor image and take a maximum over samples:

* the Lipschitz ratio compares explanation change to input change directly;
* the surrogate variant compares first-order local approximations of the
  model built from the explanations at the anchor and at the sample,
  evaluating both at the midpoint, so explanation changes that merely track
  model changes are not penalized.

Samples are drawn one at a time from a seeded generator, so runs with the
same seed share a common sample prefix and the maxima are monotone in
``n_samples``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .maps import SaliencyMap


@dataclass(frozen=True)
class PerturbationConfig:
    """L2-ball sampling plan around one anchor input."""

    epsilon: float
    n_samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise NumericError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_samples < 1:
            raise NumericError(f"n_samples must be >= 1, got {self.n_samples}")


def default_epsilon(x0, scale: float = 0.01) -> float:
    """Radius proportional to the anchor's norm; keeps perturbations small."""
    return scale * float(np.linalg.norm(np.asarray(x0, dtype=np.float64)))


def _map_vector(explanation) -> np.ndarray:
    v = explanation.values if isinstance(explanation, SaliencyMap) else explanation
    return np.asarray(v, dtype=np.float64).ravel()


def _channel_sum(x: np.ndarray) -> np.ndarray:
    return x.sum(axis=0) if x.ndim == 3 else x


def sample_neighborhood(x0, cfg: PerturbationConfig) -> list[np.ndarray]:
    """n_samples inputs x0 + delta with ||delta||_2 < epsilon, uniform in the ball."""
    anchor = np.asarray(x0, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    dim = anchor.size
    samples = []
    for _ in range(cfg.n_samples):
        direction = rng.standard_normal(anchor.shape)
        u = rng.random()
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            samples.append(anchor.copy())
            continue
        radius = cfg.epsilon * u ** (1.0 / dim)
        samples.append(anchor + direction * (radius / norm))
    return samples


def lip(x0, explain, cfg: PerturbationConfig) -> float:
    """Max ratio of explanation change to input change over the neighborhood.

    ``explain`` maps an image to a saliency map (array or SaliencyMap) of a
    fixed shape. Zero-norm perturbations are skipped.
    """
    anchor = np.asarray(x0, dtype=np.float64)
    s0 = _map_vector(explain(anchor))
    worst = 0.0
    for sample in sample_neighborhood(anchor, cfg):
        denom = float(np.linalg.norm(sample - anchor))
        if denom == 0.0:
            continue
        s_tilde = _map_vector(explain(sample))
        if s_tilde.shape != s0.shape:
            raise ShapeError("explain produced maps of different sizes")
        worst = max(worst, float(np.linalg.norm(s0 - s_tilde)) / denom)
    return worst


@dataclass(frozen=True)
class SurrogateModel:
    """First-order local approximation of the model around one anchor.

    The saliency vector has one weight per pixel; image differences are
    channel-summed before the inner product so a single-channel map can
    explain a multi-channel input.
    """

    anchor: np.ndarray  # [C, H, W] or [H, W]
    saliency: np.ndarray  # float64 [H * W]
    base_score: float

    def __post_init__(self):
        plane = _channel_sum(np.asarray(self.anchor, dtype=np.float64))
        if self.saliency.size != plane.size:
            raise ShapeError(
                f"saliency has {self.saliency.size} weights for {plane.size} pixels"
            )


def build_surrogate(x, explain, score) -> SurrogateModel:
    anchor = np.asarray(x, dtype=np.float64)
    return SurrogateModel(
        anchor=anchor, saliency=_map_vector(explain(anchor)), base_score=float(score(anchor))
    )


def surrogate_eval(model: SurrogateModel, x) -> float:
    """base_score + <saliency, channel-sum(x - anchor)>."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.shape != np.asarray(model.anchor).shape:
        raise ShapeError(f"input shape {xv.shape} != anchor shape {model.anchor.shape}")
    diff = _channel_sum(xv - np.asarray(model.anchor, dtype=np.float64)).ravel()
    return float(model.base_score + model.saliency @ diff)


def session_explainer(session, explain_fn, class_id: int | None = None):
    """Image -> SaliencyMap closure that re-exports attentions per call.

    For live models the explanation of a perturbed input needs fresh attention
    tensors, so the closure issues attentions (and, when ``class_id`` is
    given, gradients) requests through the oracle session and assembles a
    transient bundle for ``explain_fn``.
    """
    from .bundle import AttentionBundle  # local import keeps this module oracle-agnostic

    info = session.handshake()
    height, width = info.input_shape[-2], info.input_shape[-1]
    n = info.tokens - 1
    patch_area, rem = divmod(height * width, n)
    patch = int(round(patch_area**0.5))
    if rem != 0 or patch * patch != patch_area:
        raise ShapeError(
            f"oracle geometry {height}x{width} with {n} patches has no square patch size"
        )

    def explain(image) -> SaliencyMap:
        img32 = np.asarray(image, dtype=np.float32)
        bundle = AttentionBundle(
            image_id="<live>",
            layers=info.layers,
            heads=info.heads,
            tokens=info.tokens,
            patch_size=patch,
            image_height=height,
            image_width=width,
            class_count=info.class_count,
            attentions=session.get_attentions(img32),
            gradients={}
            if class_id is None
            else {class_id: session.get_gradients(img32, class_id)},
        )
        return explain_fn(bundle)

    return explain


def lss(x0, explain, score, cfg: PerturbationConfig) -> float:
    """Max surrogate disagreement at midpoints, per unit of input change.

    For each sample, surrogates built at the anchor and at the sample are
    evaluated at their midpoint; the absolute difference is normalized by the
    input distance. Explanations that are exact first-order models (e.g. the
    gradient of a linear model) score 0.
    """
    anchor = np.asarray(x0, dtype=np.float64)
    at_anchor = build_surrogate(anchor, explain, score)
    worst = 0.0
    for sample in sample_neighborhood(anchor, cfg):
        denom = float(np.linalg.norm(sample - anchor))
        if denom == 0.0:
            continue
        at_sample = build_surrogate(sample, explain, score)
        midpoint = (anchor + sample) / 2.0
        deviation = surrogate_eval(at_anchor, midpoint) - surrogate_eval(at_sample, midpoint)
        worst = max(worst, abs(deviation) / denom)
    return worst
