import numpy as np
import pytest

from maskfer.feature_store import FeatureDataset


def random_dataset(rng, n=None, c=None, d=None, l=7, name="test"):
    n = n or int(rng.integers(1, 12))
    c = c or int(rng.integers(l, 24))
    d = d or int(rng.integers(1, 9))
    return FeatureDataset(
        name=name,
        frozen_features=rng.normal(size=(n, c)).astype(np.float32),
        backbone_inputs=rng.normal(size=(n, d)).astype(np.float32),
        labels=rng.integers(0, l, n).astype(np.uint8),
        num_classes=l,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset(rng):
    return random_dataset(rng, n=10, c=14, d=5)
