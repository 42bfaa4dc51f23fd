"""Image loading and the two preprocessing recipes.

clip_pixels follows the published CLIP recipe: bicubic resize of the short
side to 224, center crop to 224x224, scale to [0, 1], then normalize with
the CLIP channel means and standard deviations.  backbone_input is the
core-facing recipe: grayscale, 32x32, flattened to 1024 floats in [0, 1].
"""

from __future__ import annotations

import numpy as np
from PIL import Image

CLIP_SIZE = 224
CLIP_MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
CLIP_STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)

BACKBONE_SIDE = 32


def load_image(path):
    """Open an image and force RGB; raises OSError for unreadable files."""
    with Image.open(path) as img:
        return img.convert("RGB")


def clip_pixels(img: Image.Image) -> np.ndarray:
    """CLIP preprocessing; returns a (3, 224, 224) float32 array."""
    w, h = img.size
    scale = CLIP_SIZE / min(w, h)
    img = img.resize(
        (max(CLIP_SIZE, round(w * scale)), max(CLIP_SIZE, round(h * scale))),
        Image.BICUBIC,
    )
    w, h = img.size
    left = (w - CLIP_SIZE) // 2
    top = (h - CLIP_SIZE) // 2
    img = img.crop((left, top, left + CLIP_SIZE, top + CLIP_SIZE))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - CLIP_MEAN) / CLIP_STD
    return arr.transpose(2, 0, 1)


def backbone_input(img: Image.Image) -> np.ndarray:
    """Grayscale 32x32 flattened to 1024 float32 values in [0, 1]."""
    img = img.convert("L").resize((BACKBONE_SIDE, BACKBONE_SIDE), Image.BILINEAR)
    return (np.asarray(img, dtype=np.float32) / 255.0).reshape(-1)
