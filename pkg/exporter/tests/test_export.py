import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from feature_exporter import (
    BACKBONE_DIM,
    FEATURE_DIM,
    ExportError,
    ExportJob,
    HashedProjectionEncoder,
    backbone_input,
    clip_pixels,
    export,
    load_image,
)
from feature_exporter.cli import main
from feature_exporter.export import scan_directory
from maskfer.feature_store import read_feature_file
from maskfer.network import MaskNetwork

GOLDEN = Path(__file__).resolve().parent.parent / "golden"


def make_image(path, seed=0, size=(48, 40)):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def make_tree(root, classes=7, per_class=2):
    for c in range(classes):
        for i in range(per_class):
            make_image(root / f"class{c}" / f"img{i}.png", seed=c * 10 + i)


# ---- preprocessing ---------------------------------------------------------

def test_clip_pixels_shape_and_range(tmp_path):
    make_image(tmp_path / "a.png", size=(300, 200))
    arr = clip_pixels(load_image(tmp_path / "a.png"))
    assert arr.shape == (3, 224, 224)
    assert arr.dtype == np.float32
    assert np.isfinite(arr).all()


def test_clip_pixels_small_image_upscaled(tmp_path):
    make_image(tmp_path / "a.png", size=(20, 30))
    assert clip_pixels(load_image(tmp_path / "a.png")).shape == (3, 224, 224)


def test_backbone_input_shape(tmp_path):
    make_image(tmp_path / "a.png")
    vec = backbone_input(load_image(tmp_path / "a.png"))
    assert vec.shape == (BACKBONE_DIM,)
    assert vec.min() >= 0.0 and vec.max() <= 1.0


# ---- encoder ---------------------------------------------------------------

def test_hashed_encoder_deterministic():
    enc_a = HashedProjectionEncoder(seed=1)
    enc_b = HashedProjectionEncoder(seed=1)
    pixels = np.random.default_rng(0).normal(size=(2, 3, 224, 224))
    np.testing.assert_array_equal(enc_a.encode(pixels), enc_b.encode(pixels))
    enc_c = HashedProjectionEncoder(seed=2)
    assert not np.array_equal(enc_a.encode(pixels), enc_c.encode(pixels))


def test_hashed_encoder_output_width():
    enc = HashedProjectionEncoder()
    out = enc.encode(np.zeros((3, 3, 224, 224)))
    assert out.shape == (3, FEATURE_DIM)
    with pytest.raises(ValueError):
        enc.encode(np.zeros((3, 3, 100, 100)))


# ---- directory scanning ----------------------------------------------------

def test_scan_sorted_order(tmp_path):
    make_tree(tmp_path, classes=3, per_class=2)
    pairs, classes = scan_directory(tmp_path)
    assert classes == ["class0", "class1", "class2"]
    assert [label for _, label in pairs] == [0, 0, 1, 1, 2, 2]
    names = [p.name for p, _ in pairs]
    assert names == sorted(names[:2]) + sorted(names[2:4]) + sorted(names[4:])


def test_scan_rejects_flat_directory(tmp_path):
    make_image(tmp_path / "a.png")
    with pytest.raises(ExportError):
        scan_directory(tmp_path)


# ---- export ----------------------------------------------------------------

def test_export_seven_by_two(tmp_path):
    make_tree(tmp_path / "imgs", classes=7, per_class=2)
    entry = export(ExportJob(tmp_path / "imgs", tmp_path / "out.cafeft"))
    ds = read_feature_file(tmp_path / "out.cafeft", name="imgs")
    assert ds.num_samples == 14
    assert ds.feature_dim == 512 and ds.input_dim == 1024
    assert ds.num_classes == 7
    assert entry["images"] == 14 and entry["skipped"] == 0


def test_export_skips_unreadable(tmp_path, caplog):
    make_tree(tmp_path / "imgs", classes=2, per_class=1)
    (tmp_path / "imgs" / "class0" / "broken.png").write_bytes(b"not a png")
    entry = export(ExportJob(tmp_path / "imgs", tmp_path / "out.cafeft"))
    assert entry["images"] == 2 and entry["skipped"] == 1


def test_export_zero_usable_images_errors(tmp_path):
    (tmp_path / "imgs" / "class0").mkdir(parents=True)
    (tmp_path / "imgs" / "class0" / "broken.png").write_bytes(b"junk")
    with pytest.raises(ExportError):
        export(ExportJob(tmp_path / "imgs", tmp_path / "out.cafeft"))


def test_export_deterministic_sha256(tmp_path):
    make_tree(tmp_path / "imgs", classes=3, per_class=2)
    e1 = export(ExportJob(tmp_path / "imgs", tmp_path / "a.cafeft"))
    e2 = export(ExportJob(tmp_path / "imgs", tmp_path / "b.cafeft"))
    assert e1["sha256"] == e2["sha256"]
    assert (tmp_path / "a.cafeft").read_bytes() == (tmp_path / "b.cafeft").read_bytes()


# ---- golden set acceptance -------------------------------------------------

def test_golden_set_acceptance(tmp_path):
    entry = export(ExportJob(GOLDEN, tmp_path / "golden.cafeft"))
    ds = read_feature_file(tmp_path / "golden.cafeft", name="golden")
    assert ds.num_samples == 3
    assert ds.feature_dim == 512
    assert ds.input_dim == 1024
    assert entry["classes"] == ["happy", "neutral", "sad"]
    # repeated export is sha256-stable
    again = export(ExportJob(GOLDEN, tmp_path / "again.cafeft"))
    assert again["sha256"] == entry["sha256"]
    # an untrained core network predicts without error
    net = MaskNetwork(input_dim=1024, feature_dim=512, num_classes=3, seed=0)
    _, mask_sig, _ = net.forward_mask(np.asarray(ds.backbone_inputs, np.float64))
    gated = net.apply_mask(mask_sig, np.asarray(ds.frozen_features, np.float64))
    pred = np.argmax(net.logits(gated), axis=1)
    assert pred.shape == (3,)
    print("[PASS] exporter golden set: N=3, C=512, D=1024, sha256-stable, "
          "accepted by the core reader")


# ---- cli -------------------------------------------------------------------

def test_cli_export(tmp_path, capsys):
    make_tree(tmp_path / "imgs", classes=2, per_class=1)
    code = main(["export", "--images", str(tmp_path / "imgs"),
                 "--out", str(tmp_path / "out.cafeft")])
    assert code == 0
    entry = json.loads(capsys.readouterr().out)
    digest = hashlib.sha256((tmp_path / "out.cafeft").read_bytes()).hexdigest()
    assert entry["sha256"] == digest


def test_cli_missing_directory(tmp_path, capsys):
    code = main(["export", "--images", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "out.cafeft")])
    assert code == 1
    assert "error" in capsys.readouterr().err
