"""Tetromino images, augmentation, feature scaling, splits and image ingestion.

Labels are +1 and -1. Pixels are grayscale values in [0, 255], stored as
float arrays of shape ``(n, n)`` (or ``(n, n, c)`` for multi-channel input).
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapacityError, DataIOError, ValidationError
from .symmetry import rotate_image

# tetromino cells before placement, (row, col)
T_CELLS = ((0, 0), (0, 1), (0, 2), (1, 1))
L_CELLS = ((0, 0), (1, 0), (2, 0), (2, 1))
FOREGROUND = 255.0
RAW_HEADER = struct.Struct("<III")  # side, channels, count


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray
    label: int
    tag: str = "base"

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim not in (2, 3) or px.shape[0] != px.shape[1]:
            raise ValidationError(f"images must be square grids, got shape {px.shape}")
        if px.size and (px.min() < 0 or px.max() > 255):
            raise ValidationError("pixel values must lie in [0, 255]")
        if self.label not in (1, -1):
            raise ValidationError(f"labels are +1 or -1, got {self.label!r}")
        object.__setattr__(self, "pixels", px)

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Dataset:
    items: tuple[LabeledImage, ...]
    class_names: dict = field(default_factory=lambda: {1: "T", -1: "L"})

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    @property
    def images(self) -> np.ndarray:
        return np.stack([it.pixels for it in self.items])

    @property
    def labels(self) -> np.ndarray:
        return np.array([it.label for it in self.items], dtype=float)

    @property
    def tags(self) -> list[str]:
        return [it.tag for it in self.items]

    def features(self, low: float = -math.pi, high: float = math.pi) -> np.ndarray:
        """Scaled, flattened pixel features, one row per item."""
        return np.stack([scale_features(it, low, high) for it in self.items])

    def check_trainable(self) -> "Dataset":
        if not self.items:
            raise ValidationError("dataset is empty")
        if len(set(self.labels.tolist())) < 2:
            raise ValidationError("dataset must contain both classes")
        return self


def _orientations(cells: Sequence[tuple[int, int]]) -> list[tuple[tuple[int, int], ...]]:
    shapes = []
    grid = np.zeros((4, 4), dtype=int)
    for r, c in cells:
        grid[r, c] = 1
    for k in range(4):
        rows, cols = np.nonzero(rotate_image(grid, k))
        shapes.append(tuple(zip((rows - rows.min()).tolist(), (cols - cols.min()).tolist())))
    return shapes


def gen_tetrominoes(n: int = 4) -> Dataset:
    """Every placement of every orientation of the T (+1) and L (-1) tetrominoes."""
    if n < 4:
        raise CapacityError(f"tetrominoes need n >= 4 to fit every orientation, got {n}")
    items = []
    for cells, label in ((T_CELLS, 1), (L_CELLS, -1)):
        for shape in _orientations(cells):
            height = 1 + max(r for r, _ in shape)
            width = 1 + max(c for _, c in shape)
            for di in range(n - height + 1):
                for dj in range(n - width + 1):
                    img = np.zeros((n, n))
                    for r, c in shape:
                        img[di + r, dj + c] = FOREGROUND
                    items.append(LabeledImage(img, label, "base"))
    return Dataset(tuple(items))


def augment_noise(d: Dataset, sigma: float = 25.0, copies: int = 1, seed: int = 0) -> Dataset:
    """Append ``copies`` Gaussian-noise variants of every image, clipped to [0, 255]."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    extra = []
    for _ in range(copies):
        for it in d.items:
            noisy = np.clip(it.pixels + rng.normal(0.0, sigma, it.pixels.shape), 0, 255)
            extra.append(LabeledImage(noisy, it.label, "noise"))
    return replace(d, items=d.items + tuple(extra))


def augment_rotations(d: Dataset) -> Dataset:
    """Append the three nontrivial rotations of every image, skipping exact duplicates."""
    extra = []
    for it in d.items:
        seen = [it.pixels]
        for k in range(1, 4):
            rot = np.ascontiguousarray(rotate_image(it.pixels, k))
            if any(np.array_equal(rot, s) for s in seen):
                continue
            seen.append(rot)
            extra.append(LabeledImage(rot, it.label, "rotation"))
    return replace(d, items=d.items + tuple(extra))


def scale_features(img: LabeledImage, low: float = -math.pi, high: float = math.pi) -> np.ndarray:
    """Affine map of [0, 255] onto [low, high], flattened row-major (k = i*n + j)."""
    return low + (high - low) * img.pixels.reshape(-1) / 255.0


def split(d: Dataset, test_ratio: float = 1 / 3, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified seeded split; each class contributes ``round(ratio * size)`` test items."""
    if not 0 < test_ratio < 1:
        raise ValidationError(f"test_ratio must lie in (0, 1), got {test_ratio}")
    rng = np.random.default_rng(seed)
    labels = d.labels
    test_idx = []
    for label in (1, -1):
        idx = np.flatnonzero(labels == label)
        if idx.size == 0:
            continue
        k = min(max(int(round(test_ratio * idx.size)), 1), idx.size - 1) if idx.size > 1 else 0
        test_idx += rng.permutation(idx)[:k].tolist()
    test_set = set(test_idx)
    train_idx = [i for i in rng.permutation(len(d)).tolist() if i not in test_set]
    test_idx = [i for i in rng.permutation(len(d)).tolist() if i in test_set]
    return (
        replace(d, items=tuple(d.items[i] for i in train_idx)),
        replace(d, items=tuple(d.items[i] for i in test_idx)),
    )


# ---------------------------------------------------------------- files


def write_raw(path, images: np.ndarray) -> None:
    """Little-endian header (side, channels, count), then float64 values row-major."""
    images = np.asarray(images, dtype="<f8")
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4 or images.shape[1] != images.shape[2]:
        raise ValidationError(f"expected (count, side, side[, channels]) images, got {images.shape}")
    count, side, _, channels = images.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(RAW_HEADER.pack(side, channels, count))
        fh.write(images.tobytes())
    os.replace(tmp, path)


def read_raw(path) -> np.ndarray:
    """Inverse of :func:`write_raw`; returns ``(count, side, side, channels)``."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError("cannot read raw tensor", [path]) from exc
    if len(blob) < RAW_HEADER.size:
        raise DataIOError("truncated raw tensor header", [path])
    side, channels, count = RAW_HEADER.unpack_from(blob)
    expected = RAW_HEADER.size + 8 * side * side * channels * count
    if len(blob) != expected:
        raise DataIOError(f"raw tensor size {len(blob)} != {expected} bytes", [path])
    values = np.frombuffer(blob, dtype="<f8", offset=RAW_HEADER.size)
    return values.reshape(count, side, side, channels).astype(float)


def _resize_square(img: np.ndarray, side: int) -> np.ndarray:
    """Centre-crop to a square, then box-filter each channel to ``side``."""
    from PIL import Image

    h, w = img.shape[:2]
    m = min(h, w)
    top, left = (h - m) // 2, (w - m) // 2
    img = img[top:top + m, left:left + m]
    if m == side:
        return img.astype(float)
    channels = [
        np.asarray(Image.fromarray(img[..., c].astype(np.float32), mode="F").resize((side, side), Image.BOX))
        for c in range(img.shape[2])
    ]
    return np.clip(np.stack(channels, axis=-1).astype(float), 0, 255)


def _decode_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=float)
    return arr[..., None] if arr.ndim == 2 else arr


def load_images(path, fmt: str = "png", target_side: int = 16, grayscale: bool = True) -> Dataset:
    """Read ``<path>/<class_dir>/<files>``; the first class directory (sorted) is labelled +1."""
    root = Path(path)
    if fmt not in ("png", "raw"):
        raise ValidationError(f"format must be png or raw, got {fmt!r}")
    if not root.is_dir():
        raise DataIOError("dataset directory not found", [root])
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    if len(classes) != 2:
        raise ValidationError(f"expected exactly two class directories, found {len(classes)}")
    suffix = ".png" if fmt == "png" else ".raw"
    items, bad = [], []
    for label, cdir in zip((1, -1), classes):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() == suffix)
        if not files:
            bad.append(cdir)
        for f in files:
            try:
                arrays = [_decode_png(f)] if fmt == "png" else list(read_raw(f))
            except (OSError, ValueError):
                bad.append(f)
                continue
            for arr in arrays:
                if grayscale and arr.shape[2] > 1:
                    arr = arr.mean(axis=2, keepdims=True)
                arr = _resize_square(arr, target_side)
                px = arr[..., 0] if arr.shape[2] == 1 else arr
                items.append(LabeledImage(px, label, f.name))
    if bad:
        raise DataIOError("unreadable or missing image files", bad)
    return Dataset(tuple(items), {1: classes[0].name, -1: classes[1].name})


def save_dataset(directory, d: Dataset, provenance: dict | None = None) -> Path:
    """Write ``images.raw`` plus ``manifest.json`` (labels, tags, provenance)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_raw(directory / "images.raw", d.images)
    manifest = {
        "images": "images.raw",
        "count": len(d),
        "side": int(d.items[0].side) if d.items else 0,
        "labels": [int(v) for v in d.labels],
        "tags": d.tags,
        "class_names": {str(k): v for k, v in d.class_names.items()},
        "provenance": provenance or {},
    }
    path = directory / "manifest.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, path)
    return path


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise DataIOError("cannot read manifest", [path]) from exc
    images = read_raw(path.parent / manifest["images"])
    if images.shape[0] != len(manifest["labels"]):
        raise ValidationError("manifest label count does not match the image file")
    items = tuple(
        LabeledImage(img[..., 0] if img.shape[2] == 1 else img, int(y), tag)
        for img, y, tag in zip(images, manifest["labels"], manifest["tags"])
    )
    names = {int(k): v for k, v in manifest.get("class_names", {"1": "T", "-1": "L"}).items()}
    return Dataset(items, names)


def gen_shape_images(side: int = 16, per_class: int = 60, cell: int = 3, sigma: float = 20.0,
                     seed: int = 0, aligned: bool = False) -> Dataset:
    """Larger two-class images: T (+1) and L (-1) drawn with ``cell``-pixel blocks.

    Each image has a random orientation and position and Gaussian pixel
    noise; a stand-in for external datasets at desk scale. With
    ``aligned`` the offsets are multiples of ``cell``, so the shapes sit
    on a coarse grid (an upscaled tetromino when ``side == 4 * cell``).
    """
    if 3 * cell > side:
        raise CapacityError(f"a {cell}-pixel cell tetromino does not fit in {side}x{side}")
    rng = np.random.default_rng(seed)
    items = []
    for cells, label in ((T_CELLS, 1), (L_CELLS, -1)):
        shapes = _orientations(cells)
        for _ in range(per_class):
            shape = shapes[rng.integers(4)]
            height = cell * (1 + max(r for r, _ in shape))
            width = cell * (1 + max(c for _, c in shape))
            di, dj = rng.integers(side - height + 1), rng.integers(side - width + 1)
            if aligned:
                di, dj = rng.integers((side - height) // cell + 1) * cell, rng.integers((side - width) // cell + 1) * cell
            img = np.zeros((side, side))
            for r, c in shape:
                img[di + cell * r:di + cell * (r + 1), dj + cell * c:dj + cell * (c + 1)] = FOREGROUND
            img = np.clip(img + rng.normal(0.0, sigma, img.shape), 0, 255)
            items.append(LabeledImage(img, label, "shape"))
    order = rng.permutation(len(items))
    return Dataset(tuple(items[i] for i in order))


def tetromino_dataset(n: int = 4, sigma: float = 25.0, copies: int = 1, seed: int = 0) -> Dataset:
    """The base tetromino set plus ``copies`` noisy variants per image."""
    base = gen_tetrominoes(n)
    return augment_noise(base, sigma, copies, seed) if copies else base


__all__ = [
    "Dataset",
    "LabeledImage",
    "augment_noise",
    "augment_rotations",
    "gen_shape_images",
    "gen_tetrominoes",
    "load_dataset",
    "load_images",
    "read_raw",
    "save_dataset",
    "scale_features",
    "split",
    "tetromino_dataset",
    "write_raw",
]
