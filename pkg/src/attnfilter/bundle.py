"""Attention-bundle container: validated domain type plus directory I/O.

A bundle directory is the on-disk exchange format between any model bridge
and this toolkit:

    manifest.json
    attentions.npy            float32 [L, H, T, T]
    logits.npy                float32 [C]           (optional)
    gradients_<c>.npy         float32 [L, H, T, T]  (one per target class)

manifest.json carries exactly these keys: image_id, layers, heads, tokens,
patch_size, image_height, image_width, class_count, target_classes (list of
ints), files (map name -> relative path).
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import npyio
from .errors import AlreadyExists, BundleInvalid, IoError, MissingComponent

ROW_SUM_TOL = 1e-4

MANIFEST_KEYS = {
    "image_id",
    "layers",
    "heads",
    "tokens",
    "patch_size",
    "image_height",
    "image_width",
    "class_count",
    "target_classes",
    "files",
}


def validate_attention_tensor(att: np.ndarray, name: str = "attentions") -> None:
    """Check the row-stochastic and value-range invariants of an attention tensor."""
    if not ((att >= 0.0).all() and (att <= 1.0).all()):
        raise BundleInvalid("value-range", f"{name} entries must lie in [0, 1]")
    row_sums = att.sum(axis=-1, dtype=np.float64)
    err = float(np.abs(row_sums - 1.0).max())
    if err > ROW_SUM_TOL:
        raise BundleInvalid(
            "row-stochastic", f"{name} rows must sum to 1 within {ROW_SUM_TOL}, worst error {err:.3g}"
        )


@dataclass
class AttentionBundle:
    """Per-image attention export: tensors plus the geometry they were taken at."""

    image_id: str
    layers: int
    heads: int
    tokens: int
    patch_size: int
    image_height: int
    image_width: int
    class_count: int
    attentions: np.ndarray  # float32 [L, H, T, T]
    logits: np.ndarray | None = None  # float32 [C]
    gradients: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def patch_count(self) -> int:
        return self.tokens - 1

    def predicted_class(self) -> int:
        if self.logits is None:
            raise MissingComponent(f"{self.image_id}: bundle has no logits")
        return int(np.argmax(self.logits))

    def validate(self) -> "AttentionBundle":
        """Check every bundle invariant; raises BundleInvalid naming the failure."""
        n = self.tokens - 1
        if self.tokens < 2 or n * self.patch_size**2 != self.image_height * self.image_width:
            raise BundleInvalid(
                "geometry",
                f"tokens={self.tokens} but {self.image_height}x{self.image_width} "
                f"/ {self.patch_size}^2 + 1 = "
                f"{self.image_height * self.image_width / self.patch_size ** 2 + 1:g}",
            )
        expected = (self.layers, self.heads, self.tokens, self.tokens)
        if tuple(self.attentions.shape) != expected:
            raise BundleInvalid(
                "attention-shape", f"attentions shape {self.attentions.shape}, expected {expected}"
            )
        validate_attention_tensor(self.attentions)
        for cls, grad in self.gradients.items():
            if not (0 <= int(cls) < self.class_count):
                raise BundleInvalid("gradient-class", f"class {cls} outside [0, {self.class_count})")
            if tuple(grad.shape) != expected:
                raise BundleInvalid(
                    "gradient-shape", f"gradients_{cls} shape {grad.shape}, expected {expected}"
                )
        if self.logits is not None and self.logits.shape != (self.class_count,):
            raise BundleInvalid(
                "logits-length", f"logits shape {self.logits.shape}, expected ({self.class_count},)"
            )
        return self


def load_bundle(directory) -> AttentionBundle:
    """Read and validate a bundle directory."""
    base = Path(directory)
    manifest_path = base / "manifest.json"
    if not manifest_path.exists():
        raise MissingComponent(f"{base}: manifest.json not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleInvalid("manifest", f"{manifest_path}: {exc}") from exc
    missing = MANIFEST_KEYS - set(manifest)
    if missing:
        raise BundleInvalid("manifest", f"missing keys {sorted(missing)}")
    files = manifest["files"]

    def tensor(name: str) -> np.ndarray:
        if name not in files:
            raise MissingComponent(f"{base}: manifest lists no {name!r} entry")
        path = base / files[name]
        if not path.exists():
            raise MissingComponent(f"{path}: listed in manifest but absent")
        return npyio.read_tensor(path)

    attentions = tensor("attentions")
    logits = tensor("logits") if "logits" in files else None
    gradients = {int(c): tensor(f"gradients_{int(c)}") for c in manifest["target_classes"]}
    bundle = AttentionBundle(
        image_id=str(manifest["image_id"]),
        layers=int(manifest["layers"]),
        heads=int(manifest["heads"]),
        tokens=int(manifest["tokens"]),
        patch_size=int(manifest["patch_size"]),
        image_height=int(manifest["image_height"]),
        image_width=int(manifest["image_width"]),
        class_count=int(manifest["class_count"]),
        attentions=attentions,
        logits=logits,
        gradients=gradients,
    )
    return bundle.validate()


def save_bundle(bundle: AttentionBundle, directory, overwrite: bool = False) -> None:
    """Write a validated bundle so that load_bundle reproduces it bit-exactly."""
    bundle.validate()
    base = Path(directory)
    if base.exists():
        if not overwrite:
            raise AlreadyExists(f"{base} exists; pass overwrite=True to replace it")
        shutil.rmtree(base)
    try:
        base.mkdir(parents=True)
        files = {"attentions": "attentions.npy"}
        npyio.write_tensor(base / "attentions.npy", np.asarray(bundle.attentions, np.float32))
        if bundle.logits is not None:
            files["logits"] = "logits.npy"
            npyio.write_tensor(base / "logits.npy", np.asarray(bundle.logits, np.float32))
        for cls in sorted(bundle.gradients):
            name = f"gradients_{cls}"
            files[name] = f"{name}.npy"
            npyio.write_tensor(base / f"{name}.npy", np.asarray(bundle.gradients[cls], np.float32))
        manifest = {
            "image_id": bundle.image_id,
            "layers": bundle.layers,
            "heads": bundle.heads,
            "tokens": bundle.tokens,
            "patch_size": bundle.patch_size,
            "image_height": bundle.image_height,
            "image_width": bundle.image_width,
            "class_count": bundle.class_count,
            "target_classes": sorted(bundle.gradients),
            "files": files,
        }
        (base / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write bundle to {base}: {exc}") from exc
