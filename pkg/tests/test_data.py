from __future__ import annotations

import json
import math

import numpy as np
import pytest
from PIL import Image

from c4vqc.data import (
    Dataset,
    LabeledImage,
    augment_noise,
    augment_rotations,
    gen_shape_images,
    gen_tetrominoes,
    load_dataset,
    load_images,
    read_raw,
    save_dataset,
    scale_features,
    split,
    write_raw,
)
from c4vqc.errors import CapacityError, DataIOError, ValidationError
from c4vqc.symmetry import rotate_image


def key(img):
    return img.pixels.tobytes()


def test_tetromino_counts_and_pixels():
    d = gen_tetrominoes(4)
    assert len(d) == 48
    assert sum(d.labels == 1) == sum(d.labels == -1) == 24
    for it in d.items:
        assert np.count_nonzero(it.pixels) == 4
        assert set(np.unique(it.pixels)) == {0.0, 255.0}
    assert len({key(it) for it in d.items}) == 48
    with pytest.raises(CapacityError):
        gen_tetrominoes(3)
    assert len(gen_tetrominoes(5)) == 2 * 4 * 12


def test_tetrominoes_closed_under_rotation():
    d = gen_tetrominoes(4)
    by_key = {key(it): it.label for it in d.items}
    for it in d.items:
        for k in range(1, 4):
            rot = np.ascontiguousarray(rotate_image(it.pixels, k))
            assert by_key[rot.tobytes()] == it.label


def test_l_tetromino_is_chiral():
    # a mirrored L is never an L: reflection does not preserve labels
    d = gen_tetrominoes(4)
    keys = {key(it) for it in d.items if it.label == -1}
    for it in d.items:
        if it.label == -1:
            assert np.ascontiguousarray(it.pixels[:, ::-1]).tobytes() not in keys


def test_augment_noise():
    d = gen_tetrominoes(4)
    same = augment_noise(d, sigma=0, copies=1)
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(d.items, same.items[48:]))
    three = augment_noise(d, 25, copies=3, seed=1)
    assert len(three) == 192
    assert all(it.label == d.items[i % 48].label for i, it in enumerate(three.items[48:]))
    assert all(0 <= it.pixels.min() and it.pixels.max() <= 255 for it in three.items)
    again = augment_noise(d, 25, copies=3, seed=1)
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(three.items, again.items))
    with pytest.raises(ValidationError):
        augment_noise(d, -1)


def test_augment_rotations():
    sym = LabeledImage(np.full((3, 3), 9.0), 1)
    assert len(augment_rotations(Dataset((sym,)))) == 1
    generic = LabeledImage(np.arange(9.0).reshape(3, 3), -1)
    out = augment_rotations(Dataset((generic,)))
    assert len(out) == 4 and all(it.label == -1 for it in out.items)
    half = LabeledImage(np.array([[1.0, 0.0], [0.0, 1.0]]), 1)
    assert len(augment_rotations(Dataset((half,)))) == 2


def test_scale_features():
    img = LabeledImage(np.array([[0.0, 255.0], [127.5, 51.0]]), 1)
    x = scale_features(img)
    assert x[0] == -math.pi and x[1] == math.pi and abs(x[2]) < 1e-15
    assert scale_features(img, 0.0, math.pi)[1] == math.pi
    # scaling commutes with the pixel permutation of a rotation
    rot = LabeledImage(rotate_image(img.pixels), 1)
    assert np.array_equal(scale_features(rot), rotate_image(x.reshape(2, 2)).ravel())


def test_split():
    d = gen_tetrominoes(4)
    train, test = split(d, 1 / 3, seed=3)
    assert (len(train), len(test)) == (32, 16)
    assert set(train.labels) == set(test.labels) == {1.0, -1.0}
    assert {key(it) for it in train.items}.isdisjoint({key(it) for it in test.items})
    again = split(d, 1 / 3, seed=3)
    assert [key(it) for it in again[0].items] == [key(it) for it in train.items]
    with pytest.raises(ValidationError):
        split(d, 1.0)


def test_labeled_image_validation():
    with pytest.raises(ValidationError):
        LabeledImage(np.zeros((2, 3)), 1)
    with pytest.raises(ValidationError):
        LabeledImage(np.full((2, 2), 300.0), 1)
    with pytest.raises(ValidationError):
        LabeledImage(np.zeros((2, 2)), 0)


def test_raw_round_trip(tmp_path):
    imgs = np.random.default_rng(0).uniform(0, 255, (3, 5, 5, 2))
    write_raw(tmp_path / "a.raw", imgs)
    assert np.array_equal(read_raw(tmp_path / "a.raw"), imgs)
    blob = (tmp_path / "a.raw").read_bytes()
    assert blob[:12] == (5).to_bytes(4, "little") + (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    (tmp_path / "b.raw").write_bytes(blob[:-8])
    with pytest.raises(DataIOError):
        read_raw(tmp_path / "b.raw")


def test_manifest_round_trip(tmp_path):
    d = augment_noise(gen_tetrominoes(4), 10, 1, 2)
    save_dataset(tmp_path, d, {"seed": 2})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["count"] == 96 and manifest["provenance"] == {"seed": 2}
    back = load_dataset(tmp_path)
    assert np.array_equal(back.images, d.images)
    assert np.array_equal(back.labels, d.labels) and back.tags == d.tags


def _write_png_classes(root, count=10, size=(20, 24), mode="RGB"):
    rng = np.random.default_rng(0)
    for name in ("left", "right"):
        (root / name).mkdir(parents=True)
        for k in range(count):
            shape = (size[1], size[0], 3) if mode == "RGB" else (size[1], size[0])
            arr = rng.integers(0, 256, shape).astype(np.uint8)
            Image.fromarray(arr, mode=mode).save(root / name / f"{k}.png")


def test_load_png_images(tmp_path):
    _write_png_classes(tmp_path)
    d = load_images(tmp_path, "png", target_side=16, grayscale=True)
    assert len(d) == 20 and d.images.shape == (20, 16, 16)
    assert list(d.labels[:10]) == [1] * 10 and list(d.labels[10:]) == [-1] * 10
    assert d.class_names == {1: "left", -1: "right"}
    rgb = load_images(tmp_path, "png", target_side=8, grayscale=False)
    assert rgb.images.shape == (20, 8, 8, 3)


def test_load_images_errors(tmp_path):
    _write_png_classes(tmp_path, count=2)
    (tmp_path / "left" / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DataIOError) as err:
        load_images(tmp_path, "png", 8)
    assert any("broken.png" in p for p in err.value.paths)
    (tmp_path / "third").mkdir()
    with pytest.raises(ValidationError):
        load_images(tmp_path, "png", 8)
    with pytest.raises(DataIOError):
        load_images(tmp_path / "missing", "png", 8)


def test_load_raw_images(tmp_path):
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        write_raw(tmp_path / name / "x.raw", np.full((3, 12, 12), 100.0))
    d = load_images(tmp_path, "raw", target_side=6)
    assert len(d) == 6 and np.allclose(d.images, 100.0)


def test_shape_images():
    d = gen_shape_images(16, 10, 3, 0.0, seed=1)
    assert len(d) == 20 and d.images.shape == (20, 16, 16)
    assert all(np.count_nonzero(it.pixels) == 36 for it in d.items)
    again = gen_shape_images(16, 10, 3, 0.0, seed=1)
    assert np.array_equal(again.images, d.images)


def test_aligned_shape_images_pool_to_tetrominoes():
    d = gen_shape_images(16, 8, 4, 0.0, seed=2, aligned=True)
    base = {key(it) for it in gen_tetrominoes(4).items}
    for it in d.items:
        pooled = it.pixels.reshape(4, 4, 4, 4).mean(axis=(1, 3))
        assert np.ascontiguousarray(pooled).tobytes() in base
