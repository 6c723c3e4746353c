"""Figure rendering for reports and saliency overlays (Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import colormaps  # noqa: E402

from .maps import SaliencyMap  # noqa: E402
from .report import MetricReport  # noqa: E402

_VIRIDIS = colormaps["viridis"]
OVERLAY_ALPHA = 0.5


def _group_label(method: str, k) -> str:
    return method if k is None else f"{method} (K={k:g})"


def render_metric_summary(report: MetricReport, path) -> Path | None:
    """One bar panel per metric, mean with std error bars per method/K group."""
    aggregates = report.aggregates()
    if not aggregates:
        return None
    metrics = sorted({a["metric"] for a in aggregates})
    groups = sorted({(a["method"], a["k"]) for a in aggregates}, key=lambda g: (g[0], str(g[1])))
    ncols = min(4, len(metrics))
    nrows = (len(metrics) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.6 * nrows), squeeze=False)
    by_key = {(a["method"], a["k"], a["metric"]): a for a in aggregates}
    for i, metric in enumerate(metrics):
        ax = axes[i // ncols][i % ncols]
        xs, means, stds, labels = [], [], [], []
        for j, (method, k) in enumerate(groups):
            agg = by_key.get((method, k, metric))
            if agg is None:
                continue
            xs.append(j)
            means.append(agg["mean"])
            stds.append(agg["std"])
            labels.append(_group_label(method, k))
        ax.bar(range(len(xs)), means, yerr=stds, capsize=3, color="#4878a8")
        ax.set_xticks(range(len(xs)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_title(metric, fontsize=9)
        ax.tick_params(labelsize=7)
    for i in range(len(metrics), nrows * ncols):
        axes[i // ncols][i % ncols].axis("off")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_k_sweep(report: MetricReport, path) -> Path | None:
    """Metric-vs-K lines per method; needs at least two distinct K values."""
    aggregates = [a for a in report.aggregates() if a["k"] is not None]
    ks = sorted({a["k"] for a in aggregates})
    if len(ks) < 2:
        return None
    metrics = sorted({a["metric"] for a in aggregates})
    methods = sorted({a["method"] for a in aggregates})
    ncols = min(3, len(metrics))
    nrows = (len(metrics) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.4 * ncols, 2.8 * nrows), squeeze=False)
    by_key = {(a["method"], a["k"], a["metric"]): a["mean"] for a in aggregates}
    for i, metric in enumerate(metrics):
        ax = axes[i // ncols][i % ncols]
        for method in methods:
            pts = [(k, by_key[(method, k, metric)]) for k in ks if (method, k, metric) in by_key]
            if len(pts) >= 2:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
        ax.set_title(metric, fontsize=9)
        ax.set_xlabel("K", fontsize=8)
        ax.tick_params(labelsize=7)
        ax.legend(fontsize=6)
    for i in range(len(metrics), nrows * ncols):
        axes[i // ncols][i % ncols].axis("off")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_curves(curves: dict[str, list], path) -> Path | None:
    """Mean perturbation curves per label (e.g. 'rfem deletion-morf')."""
    if not curves:
        return None
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label in sorted(curves):
        entries = curves[label]
        if not entries:
            continue
        fractions = entries[0].fractions
        mean_scores = np.mean([c.scores for c in entries], axis=0)
        ax.plot(fractions, mean_scores, label=f"{label} (n={len(entries)})")
    ax.set_xlabel("fraction of pixels perturbed")
    ax.set_ylabel("model score")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_bench(rows: list[dict], path) -> Path | None:
    """Runtime bar chart: per-method mean seconds with std error bars."""
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    labels = [r["method"] for r in rows]
    ax.bar(
        range(len(rows)),
        [r["mean_s"] for r in rows],
        yerr=[r["std_s"] for r in rows],
        capsize=3,
        color="#4878a8",
    )
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("seconds / image")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_heatmap_png(saliency: SaliencyMap, path, image=None) -> Path:
    """Colormapped saliency as PNG; alpha-blended over the image if given.

    ``image`` is an optional float [3, H, W] array (values clipped to [0, 1])
    matching the map's resolution.
    """
    from PIL import Image

    heat = _VIRIDIS(np.asarray(saliency.values, dtype=np.float64))[..., :3]
    if image is not None:
        base = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
        if base.ndim == 3:
            base = base.transpose(1, 2, 0)
        else:
            base = np.repeat(base[..., None], 3, axis=2)
        if base.shape[:2] != heat.shape[:2]:
            raise ValueError(f"image {base.shape[:2]} does not match map {heat.shape[:2]}")
        heat = (1.0 - OVERLAY_ALPHA) * base + OVERLAY_ALPHA * heat
    out = (np.clip(heat, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    Image.fromarray(out).save(path)
    return path
