"""Visual encoders producing the 512-wide frozen features.

ClipEncoder wraps the CLIP ViT-B/32 visual tower (512-d projection output)
via transformers; it needs the model weights, downloaded or local.
HashedProjectionEncoder is a deterministic, dependency-light stand-in:
average-pool the CLIP-preprocessed pixels to 32x32, then a fixed seeded
random projection with tanh.  Both consume (N, 3, 224, 224) pixel batches
and emit (N, 512) float32 features.
"""

from __future__ import annotations

import numpy as np

FEATURE_DIM = 512


class HashedProjectionEncoder:
    """Seeded tanh random projection of pooled pixels; no model download."""

    name = "hashed"

    def __init__(self, seed=0):
        self.seed = seed
        rng = np.random.default_rng([seed, 0xFE47])
        pooled_dim = 3 * 32 * 32
        self._projection = rng.normal(
            0.0, 1.0 / np.sqrt(pooled_dim), size=(pooled_dim, FEATURE_DIM)
        )
        self._bias = rng.normal(0.0, 0.1, size=FEATURE_DIM)

    def encode(self, pixels: np.ndarray) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 4 or pixels.shape[1:] != (3, 224, 224):
            raise ValueError(f"expected (N, 3, 224, 224) pixels, got {pixels.shape}")
        n = pixels.shape[0]
        # 7x7 average pooling: 224 -> 32 per side
        pooled = pixels.reshape(n, 3, 32, 7, 32, 7).mean(axis=(3, 5))
        flat = pooled.reshape(n, -1)
        return np.tanh(flat @ self._projection + self._bias).astype(np.float32)


class ClipEncoder:
    """CLIP ViT-B/32 visual tower with projection head (512-d output)."""

    name = "clip"

    def __init__(self, model_id="openai/clip-vit-base-patch32", device="cpu"):
        import torch
        from transformers import CLIPVisionModelWithProjection

        self._torch = torch
        self._model = CLIPVisionModelWithProjection.from_pretrained(model_id)
        self._model.eval().to(device)
        self._device = device
        if self._model.config.projection_dim != FEATURE_DIM:
            raise ValueError(
                f"encoder projects to {self._model.config.projection_dim}, "
                f"expected {FEATURE_DIM}"
            )

    def encode(self, pixels: np.ndarray) -> np.ndarray:
        torch = self._torch
        batch = torch.from_numpy(np.asarray(pixels, dtype=np.float32)).to(self._device)
        with torch.no_grad():
            out = self._model(pixel_values=batch).image_embeds
        return out.cpu().numpy().astype(np.float32)


def make_encoder(kind="hashed", model_id=None, device="cpu", seed=0):
    if kind == "hashed":
        return HashedProjectionEncoder(seed=seed)
    if kind == "clip":
        return ClipEncoder(model_id=model_id or "openai/clip-vit-base-patch32",
                           device=device)
    raise ValueError(f"unknown encoder {kind!r}")
