import hashlib
import json

import numpy as np
import pytest

from maskfer.benchmark import (
    BenchmarkSpec,
    generate,
    make_provider,
    nearest_mean_oracle,
    write_benchmark,
)
from maskfer.feature_store import read_feature_file


def small_spec(**kw):
    base = dict(
        num_domains=3, num_classes=7, input_dim=6, feature_dim=14,
        samples_per_class=4, nuisance_dim=2, seed=0,
    )
    base.update(kw)
    return BenchmarkSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError):
        BenchmarkSpec(num_domains=1)
    with pytest.raises(ValueError):
        BenchmarkSpec(shift_kind="bogus")
    with pytest.raises(ValueError):
        BenchmarkSpec.from_dict({"wormhole": 1})


def test_domain_names():
    assert small_spec().domain_names() == ["source", "unseen1", "unseen2"]


def test_generate_shapes_and_balance():
    spec = small_spec()
    datasets = generate(spec)
    assert [ds.name for ds in datasets] == spec.domain_names()
    for ds in datasets:
        assert ds.num_samples == 28
        assert ds.feature_dim == 14 and ds.input_dim == 6
        counts = np.bincount(ds.labels, minlength=7)
        assert np.all(counts == 4)


def test_generate_deterministic():
    spec = small_spec()
    a = generate(spec)
    b = generate(spec)
    for da, db in zip(a, b):
        assert da == db


def test_source_unshifted_other_domains_shifted():
    spec = small_spec(seed=3)
    a = generate(spec)
    b = generate(small_spec(seed=3, shift_magnitude=0.0))
    # source is never shifted, so it matches the zero-magnitude run exactly
    assert a[0] == b[0]
    assert not np.array_equal(a[1].backbone_inputs, b[1].backbone_inputs)


def test_domains_differ_from_each_other():
    datasets = generate(small_spec())
    assert not np.array_equal(datasets[1].backbone_inputs, datasets[2].backbone_inputs)


def test_nuisance_subspace_mode():
    spec = small_spec(shift_kind="nuisance-subspace", nuisance_dim=2)
    datasets = generate(spec)
    assert len(datasets) == 3
    for ds in datasets:
        assert np.isfinite(ds.backbone_inputs).all()


def test_features_come_from_provider():
    spec = small_spec()
    provider = make_provider(spec)
    datasets = generate(spec, provider)
    for ds in datasets:
        expected = provider.extract(np.asarray(ds.backbone_inputs, np.float64))
        np.testing.assert_allclose(ds.frozen_features, expected, atol=1e-6)


def test_write_benchmark_manifest(tmp_path):
    spec = small_spec()
    manifest, datasets = write_benchmark(spec, tmp_path)
    assert (tmp_path / "manifest.json").exists()
    roles = {e["name"]: e["role"] for e in manifest["domains"]}
    assert roles == {"source": "source", "unseen1": "unseen", "unseen2": "unseen"}
    for entry in manifest["domains"]:
        path = tmp_path / entry["path"]
        assert hashlib.sha256(path.read_bytes()).hexdigest() == entry["sha256"]
        back = read_feature_file(path, name=entry["name"])
        src = next(ds for ds in datasets if ds.name == entry["name"])
        assert back == src
    # manifest round-trips the spec
    loaded = json.loads((tmp_path / "manifest.json").read_text())
    assert BenchmarkSpec.from_dict(loaded["spec"]) == spec


def test_write_benchmark_reproducible(tmp_path):
    spec = small_spec(seed=11)
    m1, _ = write_benchmark(spec, tmp_path / "a")
    m2, _ = write_benchmark(spec, tmp_path / "b")
    assert [e["sha256"] for e in m1["domains"]] == [e["sha256"] for e in m2["domains"]]


def test_oracle_perfect_on_separated_data():
    spec = small_spec(noise_scale=0.01, samples_per_class=6)
    datasets = generate(spec)
    acc = nearest_mean_oracle(datasets[0], [datasets[0]])
    assert acc["source"] == 100.0


def test_oracle_degrades_under_shift():
    spec = BenchmarkSpec(
        num_domains=2, num_classes=7, input_dim=8, feature_dim=14,
        samples_per_class=10, noise_scale=0.3, shift_magnitude=4.0, seed=2,
    )
    datasets = generate(spec)
    acc = nearest_mean_oracle(datasets[0], datasets)
    assert acc["source"] > acc["unseen1"]
