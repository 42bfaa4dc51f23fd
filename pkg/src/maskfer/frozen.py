"""Fixed face-feature providers.

The gating network never updates these features; `fingerprint` lets tests
assert that training left them untouched.  Two kinds: file-backed (rows
come verbatim from a feature file) and a seeded random tanh projection
standing in for a real pretrained encoder.
"""

from __future__ import annotations

import hashlib

import numpy as np


class FrozenProvider:
    """Base class; subclasses must be deterministic and immutable."""

    feature_dim: int

    def extract(self, backbone_inputs, indices=None):
        raise NotImplementedError

    def fingerprint(self) -> int:
        raise NotImplementedError


def _hash64(*chunks) -> int:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk)
    return int.from_bytes(h.digest()[:8], "big")


class RandomProjectionProvider(FrozenProvider):
    """tanh(x @ P + b) with P, b generated once from the seed and frozen.

    With fan_in set, each output channel reads only that many input
    coordinates (sparse columns), so different channels carry different
    subsets of the input -- closer to how real embedding channels
    specialize, and a prerequisite for channel-level selection to mean
    anything.
    """

    def __init__(self, input_dim, feature_dim, seed, normalize=False, fan_in=None):
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        self.seed = seed
        self.normalize = normalize
        self.fan_in = fan_in
        rng = np.random.default_rng(seed)
        eff = input_dim if fan_in is None else min(fan_in, input_dim)
        scale = 1.0 / np.sqrt(eff)
        self._projection = rng.normal(0.0, scale, size=(input_dim, feature_dim))
        if fan_in is not None and eff < input_dim:
            keep = np.zeros((input_dim, feature_dim))
            for c in range(feature_dim):
                rows = rng.choice(input_dim, size=eff, replace=False)
                keep[rows, c] = 1.0
            self._projection *= keep
        self._bias = rng.normal(0.0, scale, size=feature_dim)
        self._projection.flags.writeable = False
        self._bias.flags.writeable = False

    def extract(self, backbone_inputs, indices=None):
        x = np.asarray(backbone_inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected inputs of width {self.input_dim}, got shape {x.shape}"
            )
        out = np.tanh(x @ self._projection + self._bias)
        if self.normalize:
            norms = np.linalg.norm(out, axis=1, keepdims=True)
            out = out / np.maximum(norms, 1e-12)
        return out

    def fingerprint(self):
        return _hash64(
            b"random-projection",
            np.int64(self.seed).tobytes(),
            np.int64(self.input_dim).tobytes(),
            np.int64(self.feature_dim).tobytes(),
            np.int64(-1 if self.fan_in is None else self.fan_in).tobytes(),
            b"\x01" if self.normalize else b"\x00",
            self._projection.tobytes(),
            self._bias.tobytes(),
        )


class FileBackedProvider(FrozenProvider):
    """Returns stored feature rows verbatim; rows are addressed by index."""

    def __init__(self, frozen_features):
        feats = np.ascontiguousarray(frozen_features, dtype=np.float64)
        feats.flags.writeable = False
        self._features = feats
        self.feature_dim = feats.shape[1]

    def extract(self, backbone_inputs, indices=None):
        if indices is None:
            raise ValueError("file-backed provider requires row indices")
        return self._features[np.asarray(indices)]

    def fingerprint(self):
        return _hash64(b"file-backed", self._features.tobytes())
