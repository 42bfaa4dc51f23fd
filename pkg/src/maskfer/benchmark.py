"""Synthetic multi-domain classification benchmark with controlled shift.

Class prototypes are shared across domains; every domain after the source
applies its own affine distortion and/or nuisance-subspace offsets to the
inputs before the frozen provider sees them, so the frozen features inherit
a nonlinearly entangled domain shift.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .feature_store import FeatureDataset, write_feature_file
from .frozen import RandomProjectionProvider


@dataclass
class BenchmarkSpec:
    num_domains: int = 5
    num_classes: int = 7
    input_dim: int = 64
    feature_dim: int = 512
    samples_per_class: int = 80
    prototype_scale: float = 1.0
    noise_scale: float = 0.6
    shift_kind: str = "affine"  # "affine" or "nuisance-subspace"
    shift_magnitude: float = 2.5
    nuisance_dim: int = 8
    spurious_strength: float = 2.0
    provider_fan_in: int | None = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_domains < 2:
            raise ValueError("need at least a source and one unseen domain")
        if self.shift_kind not in ("affine", "nuisance-subspace"):
            raise ValueError(f"unknown shift kind {self.shift_kind!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown benchmark keys: {sorted(unknown)}")
        return cls(**d)

    def domain_names(self):
        return ["source"] + [f"unseen{i}" for i in range(1, self.num_domains)]


def make_provider(spec: BenchmarkSpec):
    return RandomProjectionProvider(
        input_dim=spec.input_dim,
        feature_dim=spec.feature_dim,
        seed=spec.seed + 7919,
        fan_in=spec.provider_fan_in,
    )


def generate(spec: BenchmarkSpec, provider=None):
    """Deterministically generate one FeatureDataset per domain, label-balanced."""
    if provider is None:
        provider = make_provider(spec)
    rng = np.random.default_rng([spec.seed, 0xBE7C])
    L, D = spec.num_classes, spec.input_dim
    prototypes = rng.normal(0.0, spec.prototype_scale, size=(L, D))
    nuis_coords = rng.choice(D, size=spec.nuisance_dim, replace=False)
    if spec.shift_kind == "nuisance-subspace":
        # nuisance coordinates carry no true signal, only the spurious
        # source-domain correlation below
        prototypes[:, nuis_coords] = 0.0
    spurious = rng.normal(0.0, 1.0, size=(L, spec.nuisance_dim))
    datasets = []
    for d, name in enumerate(spec.domain_names()):
        drng = np.random.default_rng([spec.seed, 0xD0, d])
        mag = 0.0 if d == 0 else spec.shift_magnitude
        transform = None
        offset = None
        if spec.shift_kind == "affine" and mag > 0.0:
            transform = np.eye(D) + mag * drng.normal(0.0, 1.0 / np.sqrt(D), (D, D))
            offset = mag * drng.normal(0.0, 1.0, D)
        labels = np.repeat(np.arange(L, dtype=np.uint8), spec.samples_per_class)
        x = prototypes[labels] + spec.noise_scale * drng.normal(
            0.0, 1.0, (labels.size, D)
        )
        if spec.shift_kind == "nuisance-subspace":
            if d == 0:
                # spuriously label-correlated in the source domain only
                x[:, nuis_coords] = spec.spurious_strength * spurious[labels] + (
                    spec.noise_scale * drng.normal(0.0, 1.0, (labels.size, spec.nuisance_dim))
                )
            else:
                x[:, nuis_coords] = mag * drng.normal(
                    0.0, 1.0, (labels.size, spec.nuisance_dim)
                )
        if transform is not None:
            x = x @ transform.T + offset
        frozen = provider.extract(x)
        datasets.append(
            FeatureDataset(
                name=name,
                frozen_features=frozen.astype(np.float32),
                backbone_inputs=x.astype(np.float32),
                labels=labels,
                num_classes=L,
            )
        )
    return datasets


def write_benchmark(spec: BenchmarkSpec, out_dir, provider=None):
    """Generate and write all domains plus a JSON manifest with sha256 sums."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = generate(spec, provider)
    entries = []
    for ds in datasets:
        path = out_dir / f"{ds.name}.cafeft"
        write_feature_file(ds, path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append(
            {
                "name": ds.name,
                "path": path.name,
                "sha256": digest,
                "role": "source" if ds.name == "source" else "unseen",
            }
        )
    manifest = {"spec": spec.to_dict(), "domains": entries}
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return manifest, datasets


def nearest_mean_oracle(train_dataset, test_datasets):
    """Brute-force nearest-class-mean classifier in backbone-input space.

    Deliberately scalar and independent of the trained classifier; used to
    calibrate the benchmark's difficulty.
    """
    L = train_dataset.num_classes
    D = train_dataset.input_dim
    means = []
    for cls in range(L):
        total = [0.0] * D
        count = 0
        for i in range(train_dataset.num_samples):
            if int(train_dataset.labels[i]) != cls:
                continue
            row = train_dataset.backbone_inputs[i]
            for k in range(D):
                total[k] += float(row[k])
            count += 1
        means.append([t / count for t in total] if count else None)
    accuracies = {}
    for ds in test_datasets:
        correct = 0
        for i in range(ds.num_samples):
            row = ds.backbone_inputs[i]
            best, best_cls = None, -1
            for cls in range(L):
                if means[cls] is None:
                    continue
                dist = 0.0
                for k in range(D):
                    diff = float(row[k]) - means[cls][k]
                    dist += diff * diff
                if best is None or dist < best:
                    best, best_cls = dist, cls
            if best_cls == int(ds.labels[i]):
                correct += 1
        accuracies[ds.name] = correct / ds.num_samples * 100.0
    return accuracies
