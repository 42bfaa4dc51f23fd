"""Export image directories as frozen-feature files for the maskfer core.

A pretrained visual encoder (CLIP ViT-B/32 when its weights are available,
or a deterministic seeded projection otherwise) produces the 512-wide
frozen features; downscaled grayscale pixels become the 1024-wide backbone
inputs.
"""

from .encoders import FEATURE_DIM, HashedProjectionEncoder, make_encoder
from .export import BACKBONE_DIM, ExportError, ExportJob, export
from .preprocess import backbone_input, clip_pixels, load_image

__all__ = [
    "BACKBONE_DIM",
    "FEATURE_DIM",
    "ExportError",
    "ExportJob",
    "HashedProjectionEncoder",
    "backbone_input",
    "clip_pixels",
    "export",
    "load_image",
    "make_encoder",
]

__version__ = "0.1.0"
