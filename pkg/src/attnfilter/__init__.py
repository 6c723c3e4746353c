"""Statistically filtered attention explanations for Vision Transformers,
plus plausibility, correctness, and stability metrics for any saliency map."""

from .bundle import AttentionBundle, load_bundle, save_bundle
from .explain import (
    FilteredHeads,
    HeadAggregate,
    PatchGrid,
    aggregate_heads,
    augment_with_identity,
    extract_cls_map,
    grad_modulate,
    gradcam_vit_baseline,
    ksigma_filter,
    per_head_rollout,
    rfem,
    rfem_class,
    rollout_baseline,
    saw_baseline,
    to_saliency,
)
from .maps import FixationMap, GazeDensityMap, SaliencyMap, load_gaze, load_saliency, save_saliency
from .oracle import OracleInfo, OracleSession
from .perturbation import (
    CorrectnessScores,
    PerturbationCurve,
    auc_of_curve,
    average_drop,
    average_gain,
    average_increase,
    cb_cam_map,
    delta_a_f,
    deletion_curve,
    insertion_curve,
    masking_schedule,
    pixel_ranking,
    random_baseline_map,
)
from .plausibility import PlausibilityScores, auc_judd, fixation_map, nss, pcc, sim
from .stability import (
    PerturbationConfig,
    SurrogateModel,
    lip,
    lss,
    sample_neighborhood,
    surrogate_eval,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
