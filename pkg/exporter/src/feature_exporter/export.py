"""Directory scanning and feature-file export.

The image directory must contain one subfolder per class; folder names map
to label indices 0..L-1 in sorted order, and files within a folder are
processed in sorted order, so a given directory and encoder always produce
the same bytes.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from maskfer.feature_store import FeatureDataset, write_feature_file

from .encoders import FEATURE_DIM, make_encoder
from .preprocess import backbone_input, clip_pixels, load_image

log = logging.getLogger(__name__)

BACKBONE_DIM = 32 * 32

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


class ExportError(RuntimeError):
    pass


@dataclass
class ExportJob:
    image_dir: Path
    out_path: Path
    encoder: str = "hashed"
    model_id: str | None = None
    device: str = "cpu"
    seed: int = 0
    batch_size: int = 32
    name: str = field(default="")

    def __post_init__(self):
        self.image_dir = Path(self.image_dir)
        self.out_path = Path(self.out_path)
        if not self.name:
            self.name = self.image_dir.name


def scan_directory(image_dir):
    """Sorted (path, label) pairs plus the sorted class-folder names."""
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise ExportError(f"not a directory: {image_dir}")
    classes = sorted(p.name for p in image_dir.iterdir() if p.is_dir())
    if not classes:
        raise ExportError(f"no class subfolders in {image_dir}")
    pairs = []
    for label, cls in enumerate(classes):
        for path in sorted((image_dir / cls).iterdir()):
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                pairs.append((path, label))
    return pairs, classes


def export(job: ExportJob):
    """Encode every readable image and write one feature file.

    Returns a manifest entry with the output sha256, image count, and the
    number of skipped (unreadable) files.
    """
    pairs, classes = scan_directory(job.image_dir)
    encoder = make_encoder(job.encoder, model_id=job.model_id,
                           device=job.device, seed=job.seed)
    pixels, backbone, labels = [], [], []
    skipped = 0
    for path, label in pairs:
        try:
            img = load_image(path)
        except OSError as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            skipped += 1
            continue
        pixels.append(clip_pixels(img))
        backbone.append(backbone_input(img))
        labels.append(label)
    if not labels:
        raise ExportError(f"no usable images under {job.image_dir}")
    features = np.concatenate([
        encoder.encode(np.stack(pixels[i:i + job.batch_size]))
        for i in range(0, len(pixels), job.batch_size)
    ])
    dataset = FeatureDataset(
        name=job.name,
        frozen_features=features.astype(np.float32),
        backbone_inputs=np.stack(backbone).astype(np.float32),
        labels=np.asarray(labels, dtype=np.uint8),
        num_classes=len(classes),
    )
    job.out_path.parent.mkdir(parents=True, exist_ok=True)
    write_feature_file(dataset, job.out_path)
    digest = hashlib.sha256(job.out_path.read_bytes()).hexdigest()
    return {
        "path": str(job.out_path),
        "sha256": digest,
        "images": len(labels),
        "skipped": skipped,
        "classes": classes,
        "encoder": encoder.name,
        "feature_dim": FEATURE_DIM,
        "backbone_dim": BACKBONE_DIM,
    }
