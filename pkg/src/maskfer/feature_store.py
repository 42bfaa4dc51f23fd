"""On-disk feature file format and in-memory dataset model.

File layout (little-endian, no padding):
    magic "CAFEFT01" (8 bytes) | u32 version=1 | u64 N | u32 C | u32 D | u32 L
    | N x u8 labels | N*C f32 frozen features (row-major) | N*D f32 backbone inputs
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CAFEFT01"
VERSION = 1
_HEADER = struct.Struct("<8sIQIII")


class FeatureFileError(Exception):
    """Malformed feature file; `offset` is the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ValidationError(ValueError):
    """Dataset violates an invariant (non-finite values, bad labels, ...)."""


def header_size():
    return _HEADER.size


def file_size(n, c, d):
    """Exact byte size of a feature file with the given dimensions."""
    return _HEADER.size + n * (1 + 4 * c + 4 * d)


@dataclass
class FeatureDataset:
    """One domain: frozen features, backbone inputs, and labels, row-aligned."""

    name: str
    frozen_features: np.ndarray  # N x C float32, read-only after construction
    backbone_inputs: np.ndarray  # N x D float32
    labels: np.ndarray           # N uint8
    num_classes: int = 7

    def __post_init__(self):
        self.frozen_features = np.ascontiguousarray(self.frozen_features, dtype=np.float32)
        self.backbone_inputs = np.ascontiguousarray(self.backbone_inputs, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        self.validate()
        # frozen contract: loaded features are immutable
        self.frozen_features.flags.writeable = False
        self.backbone_inputs.flags.writeable = False
        self.labels.flags.writeable = False

    def validate(self):
        n = self.frozen_features.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one sample")
        if self.frozen_features.ndim != 2 or self.backbone_inputs.ndim != 2:
            raise ValidationError("feature matrices must be 2-D")
        if self.backbone_inputs.shape[0] != n or self.labels.shape[0] != n:
            raise ValidationError("row counts of features, inputs, and labels differ")
        if not (1 <= self.num_classes <= 255):
            raise ValidationError("num_classes must be in [1, 255]")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise ValidationError("label out of range")
        if not np.isfinite(self.frozen_features).all():
            raise ValidationError("frozen_features contain non-finite values")
        if not np.isfinite(self.backbone_inputs).all():
            raise ValidationError("backbone_inputs contain non-finite values")

    @property
    def num_samples(self):
        return self.frozen_features.shape[0]

    @property
    def feature_dim(self):
        return self.frozen_features.shape[1]

    @property
    def input_dim(self):
        return self.backbone_inputs.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (
            self.name == other.name
            and self.num_classes == other.num_classes
            and self.frozen_features.shape == other.frozen_features.shape
            and self.backbone_inputs.shape == other.backbone_inputs.shape
            and self.frozen_features.tobytes() == other.frozen_features.tobytes()
            and self.backbone_inputs.tobytes() == other.backbone_inputs.tobytes()
            and self.labels.tobytes() == other.labels.tobytes()
        )


@dataclass
class Batch:
    indices: np.ndarray
    backbone_inputs: np.ndarray
    frozen_features: np.ndarray
    labels: np.ndarray

    @property
    def size(self):
        return len(self.indices)


def write_feature_file(dataset: FeatureDataset, path) -> None:
    """Serialize a dataset; byte-deterministic, validates before touching disk."""
    dataset.validate()
    n = dataset.num_samples
    header = _HEADER.pack(
        MAGIC, VERSION, n, dataset.feature_dim, dataset.input_dim, dataset.num_classes
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dataset.labels.tobytes())
        fh.write(dataset.frozen_features.astype("<f4", copy=False).tobytes())
        fh.write(dataset.backbone_inputs.astype("<f4", copy=False).tobytes())


def read_feature_file(path, name=None) -> FeatureDataset:
    """Parse and validate a feature file; raises FeatureFileError with offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FeatureFileError("truncated header", len(raw))
    magic, version, n, c, d, l = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FeatureFileError("bad magic", 0)
    if version != VERSION:
        raise FeatureFileError(f"unsupported version {version}", 8)
    expected = file_size(n, c, d)
    if len(raw) != expected:
        raise FeatureFileError(
            f"payload size mismatch: expected {expected} bytes, got {len(raw)}",
            min(len(raw), expected),
        )
    off = _HEADER.size
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)
    bad = np.nonzero(labels >= l)[0]
    if bad.size:
        i = int(bad[0])
        raise FeatureFileError(f"label {int(labels[i])} >= num_classes {l}", off + i)
    off += n
    frozen = np.frombuffer(raw, dtype="<f4", count=n * c, offset=off).reshape(n, c)
    off += 4 * n * c
    inputs = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    try:
        return FeatureDataset(
            name=name if name is not None else str(path),
            frozen_features=frozen,
            backbone_inputs=inputs,
            labels=labels,
            num_classes=l,
        )
    except ValidationError as exc:
        raise FeatureFileError(str(exc), _HEADER.size) from exc


def make_batches(dataset: FeatureDataset, batch_size, seed=0, shuffle=True):
    """Partition the dataset into batches; each index appears exactly once.

    With shuffle off the order is ascending; deterministic given seed.
    """
    n = dataset.num_samples
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        batches.append(
            Batch(
                indices=idx,
                backbone_inputs=dataset.backbone_inputs[idx],
                frozen_features=dataset.frozen_features[idx],
                labels=dataset.labels[idx],
            )
        )
    return batches
