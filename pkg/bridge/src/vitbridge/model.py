"""ViT-B16 with probed attention: capture post-softmax maps and their
gradients with respect to a target-class logit.

The probe registers a custom attention implementation that is numerically
identical to the stock eager path but (a) appends each layer's post-softmax
probabilities to a capture list and (b) optionally adds a caller-supplied
delta to the probabilities actually used downstream, which gives a clean
finite-difference hook for validating the captured gradients.

Pretrained ImageNet-1k weights are used when downloadable; otherwise the
model falls back to a seeded random initialization with the same
architecture (all protocol and export behavior is weight-independent).
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from transformers import ViTConfig, ViTForImageClassification
from transformers.modeling_utils import ALL_ATTENTION_FUNCTIONS

log = logging.getLogger("vitbridge")

MODEL_ID = "google/vit-base-patch16-224"
IMAGE_MEAN = (0.5, 0.5, 0.5)
IMAGE_STD = (0.5, 0.5, 0.5)
ATTN_IMPLEMENTATION = "probed_eager"


def _probed_attention(module, query, key, value, attention_mask, scaling=None, dropout=0.0, **kwargs):
    if scaling is None:
        scaling = query.size(-1) ** -0.5
    scores = torch.matmul(query, key.transpose(2, 3)) * scaling
    if attention_mask is not None:
        scores = scores + attention_mask
    # native-dtype softmax (float32 models match the stock eager path bitwise;
    # float64 models stay float64 end to end, which finite-difference checks need)
    probs = torch.nn.functional.softmax(scores, dim=-1)
    sink = getattr(module, "probe_sink", None)
    if sink is not None:
        sink.append(probs)
    used = probs
    delta = getattr(module, "probe_inject", None)
    if delta is not None:
        used = probs + delta
    out = torch.matmul(used, value).transpose(1, 2).contiguous()
    return out, probs


if ATTN_IMPLEMENTATION not in ALL_ATTENTION_FUNCTIONS.valid_keys():
    ALL_ATTENTION_FUNCTIONS.register(ATTN_IMPLEMENTATION, _probed_attention)


class HookedViT:
    """Eval-mode ViT-B16 exposing scores, attentions, and attention gradients."""

    def __init__(self, weights: str = "pretrained", seed: int = 0):
        if weights not in ("pretrained", "random"):
            raise ValueError(f"weights must be 'pretrained' or 'random', got {weights!r}")
        model = None
        if weights == "pretrained":
            try:
                model = ViTForImageClassification.from_pretrained(MODEL_ID)
                self.weights_origin = "pretrained"
            except OSError as exc:
                log.warning("pretrained weights unavailable (%s); using random init", exc)
        if model is None:
            torch.manual_seed(seed)
            model = ViTForImageClassification(ViTConfig(num_labels=1000))
            self.weights_origin = f"random(seed={seed})"
        model.eval()
        model.config._attn_implementation = ATTN_IMPLEMENTATION
        self.model = model
        self.attn_modules = [layer.attention for layer in model.vit.layers]
        cfg = model.config
        self.layers = cfg.num_hidden_layers
        self.heads = cfg.num_attention_heads
        self.tokens = (cfg.image_size // cfg.patch_size) ** 2 + 1
        self.class_count = cfg.num_labels
        self.input_shape = (3, cfg.image_size, cfg.image_size)

    @property
    def name(self) -> str:
        return f"vit-b16[{self.weights_origin}]"

    # --- plumbing -----------------------------------------------------------

    def _to_batch(self, images) -> torch.Tensor:
        x = torch.as_tensor(np.asarray(images, dtype=np.float32))
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"expected image shape {self.input_shape} (or a batch), got {tuple(x.shape)}")
        return x.to(next(self.model.parameters()).dtype)

    def _captured_forward(self, batch: torch.Tensor, grad: bool):
        sink: list[torch.Tensor] = []
        for module in self.attn_modules:
            module.probe_sink = sink
        try:
            with torch.enable_grad() if grad else torch.no_grad():
                logits = self.model(pixel_values=batch).logits
        finally:
            for module in self.attn_modules:
                module.probe_sink = None
        assert len(sink) == self.layers
        return logits, sink

    # --- oracle surface -----------------------------------------------------

    def score(self, images) -> np.ndarray:
        """Softmax probabilities, [C] for one image or [B, C] for a batch."""
        batch = self._to_batch(images)
        squeeze = np.asarray(images).ndim == 3
        with torch.no_grad():
            probs = torch.softmax(self.model(pixel_values=batch).logits, dim=-1)
        out = probs.float().numpy()
        return out[0] if squeeze else out

    def logits(self, image) -> np.ndarray:
        with torch.no_grad():
            return self.model(pixel_values=self._to_batch(image)).logits[0].float().numpy()

    def attentions(self, image) -> np.ndarray:
        """Post-softmax attention probabilities, float32 [L, H, T, T]."""
        _, sink = self._captured_forward(self._to_batch(image), grad=False)
        return torch.stack([p[0] for p in sink]).float().numpy()

    def gradients(self, image, class_id: int) -> np.ndarray:
        """d(logit[class_id]) / d(attention probabilities), float32 [L, H, T, T]."""
        if not (0 <= int(class_id) < self.class_count):
            raise IndexError(f"class {class_id} outside [0, {self.class_count})")
        logits, sink = self._captured_forward(self._to_batch(image), grad=True)
        grads = torch.autograd.grad(logits[0, int(class_id)], sink)
        return torch.stack([g[0] for g in grads]).float().numpy()

    def logit_with_injection(self, image, class_id: int, layer: int, delta: np.ndarray) -> float:
        """Class logit when `delta` is added to layer's post-softmax attention."""
        module = self.attn_modules[layer]
        module.probe_inject = torch.as_tensor(delta).to(next(self.model.parameters()).dtype)[None]
        try:
            with torch.no_grad():
                logits = self.model(pixel_values=self._to_batch(image)).logits
        finally:
            module.probe_inject = None
        return float(logits[0, int(class_id)])
