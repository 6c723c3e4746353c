"""Offline bundle export: one attention-bundle directory per input image.

The directory layout and manifest schema follow the shared exchange format
(manifest.json with image_id/layers/heads/tokens/patch_size/image_height/
image_width/class_count/target_classes/files, NPY v1.0 tensors), so any
consumer of that format can validate and explain the exports.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .model import IMAGE_MEAN, IMAGE_STD, HookedViT

log = logging.getLogger("vitbridge")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".npy")


def preprocess(path: Path, size: int) -> np.ndarray:
    """File -> normalized float32 [3, size, size] model input."""
    if path.suffix.lower() == ".npy":
        arr = np.load(path).astype(np.float32)
        if arr.shape != (3, size, size):
            raise ValueError(f"{path.name}: expected [3,{size},{size}], got {arr.shape}")
        return arr
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    mean = np.asarray(IMAGE_MEAN, dtype=np.float32)[:, None, None]
    std = np.asarray(IMAGE_STD, dtype=np.float32)[:, None, None]
    return (arr.transpose(2, 0, 1) - mean) / std


def export_one(model: HookedViT, image: np.ndarray, image_id: str, out_dir: Path, classes) -> Path:
    target_classes = (
        [int(np.argmax(model.logits(image)))] if classes == "predicted" else [int(c) for c in classes]
    )
    bundle_dir = out_dir / image_id
    bundle_dir.mkdir(parents=True, exist_ok=True)
    files = {"attentions": "attentions.npy", "logits": "logits.npy"}
    np.save(bundle_dir / "attentions.npy", model.attentions(image))
    np.save(bundle_dir / "logits.npy", model.logits(image).astype(np.float32))
    for cls in sorted(set(target_classes)):
        name = f"gradients_{cls}"
        files[name] = f"{name}.npy"
        np.save(bundle_dir / f"{name}.npy", model.gradients(image, cls))
    size = model.input_shape[-1]
    manifest = {
        "image_id": image_id,
        "layers": model.layers,
        "heads": model.heads,
        "tokens": model.tokens,
        "patch_size": size // int(round((model.tokens - 1) ** 0.5)),
        "image_height": size,
        "image_width": size,
        "class_count": model.class_count,
        "target_classes": sorted(set(target_classes)),
        "files": files,
    }
    (bundle_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return bundle_dir


def export_bundles(model: HookedViT, images_dir, out_dir, classes="predicted") -> list[Path]:
    """Export every readable image; corrupt inputs are skipped with a log entry."""
    images_dir = Path(images_dir)
    out_dir = Path(out_dir)
    exported = []
    for path in sorted(images_dir.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            image = preprocess(path, model.input_shape[-1])
        except Exception as exc:  # noqa: BLE001 - skip unreadable inputs
            log.warning("skipping %s: %s", path.name, exc)
            continue
        exported.append(export_one(model, image, path.stem, out_dir, classes))
        log.info("exported %s", exported[-1])
    return exported
