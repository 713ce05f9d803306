"""Dataset ingestion, stratified splitting, resizing, and augmentation.

A manifest row is (path, label, group, split).  Groups come from the image's
immediate parent directory when it sits below the class directory (e.g. a
magnification folder like ``40X``); images directly inside the class
directory get an empty group tag.  All randomness flows through named
counter-based streams, so every pixel of every batch is a pure function of
(manifest, seed).
"""

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadLabel,
    ConfigInvalid,
    EmptyClass,
    StratumTooSmall,
    UnreadableImage,
)
from .rng import stream
from .tensor import Tensor

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class Record:
    path: str
    label: int          # index into class_names
    group: str
    split: str = ""     # "", "train", "val", or "test"


@dataclass
class DatasetManifest:
    records: list
    class_names: tuple
    seed: int = None          # set once split
    skipped: list = field(default_factory=list)


def load_manifest(root_dir, class_names, group_filter=None, exclusion_list=None) -> DatasetManifest:
    """Enumerate class-labeled images under ``root_dir``.

    Every readable PNG/JPEG below ``root_dir/<class>/`` becomes one record;
    unreadable candidates land in the skip report instead of failing the
    load.  Paths are stored relative to ``root_dir`` in stable lexicographic
    order.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root_dir} does not exist")
    class_names = tuple(class_names)

    excluded = set()
    if exclusion_list is not None:
        with open(exclusion_list, encoding="utf-8") as fh:
            excluded = {line.strip() for line in fh if line.strip()}

    records, skipped = [], []
    for label, cname in enumerate(class_names):
        cdir = root / cname
        if not cdir.is_dir():
            raise EmptyClass(f"class directory {cdir} is missing")
        count = 0
        for p in sorted(cdir.rglob("*")):
            if not (p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES):
                continue
            # Stored paths keep the root prefix so the manifest alone is
            # enough to locate images later; exclusion lists may use either
            # the full path or the root-relative one.
            rel = p.relative_to(root).as_posix()
            full = p.as_posix()
            if rel in excluded or full in excluded:
                continue
            group = "" if p.parent == cdir else p.parent.name
            if group_filter is not None and group != group_filter:
                continue
            try:
                with Image.open(p) as img:
                    img.verify()  # header check only, no full decode
            except (UnidentifiedImageError, OSError):
                skipped.append(full)
                continue
            records.append(Record(full, label, group))
            count += 1
        if count == 0:
            raise EmptyClass(f"class {cname!r} has no images"
                             + (f" in group {group_filter!r}" if group_filter else ""))

    paths = [r.path for r in records]
    if len(paths) != len(set(paths)):
        raise ConfigInvalid("duplicate paths in manifest")
    return DatasetManifest(records, class_names, skipped=skipped)


def _as_fraction(x) -> Fraction:
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def split_manifest(manifest: DatasetManifest, ratios=(0.70, 0.15, 0.15), seed=0) -> DatasetManifest:
    """Assign train/val/test within each (class, group) stratum.

    Rounding rule: floor(r_train*n) to train, floor(r_val*n) to val, the
    remainder to test.  Exact rational arithmetic, so e.g. a 625-record
    stratum at 70/15/15 yields 437/93/95.
    """
    fr = [_as_fraction(r) for r in ratios]
    if len(fr) != 3 or sum(fr) != 1 or any(r < 0 for r in fr):
        raise ConfigInvalid(f"ratios must be three nonnegative values summing to 1, got {ratios}")

    strata = {}
    for i, r in enumerate(manifest.records):
        strata.setdefault((r.label, r.group), []).append(i)

    new_records = list(manifest.records)
    for (label, group), idxs in sorted(strata.items()):
        n = len(idxs)
        if n < 3:
            raise StratumTooSmall(
                f"stratum (class {manifest.class_names[label]!r}, group {group!r}) "
                f"has {n} records, needs >= 3"
            )
        n_train = math.floor(fr[0] * n)
        n_val = math.floor(fr[1] * n)
        order = stream(seed, "split", label, group).permutation(n)
        for rank, pos in enumerate(order):
            split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            i = idxs[pos]
            new_records[i] = replace(new_records[i], split=split)
    return DatasetManifest(new_records, manifest.class_names, seed=seed,
                           skipped=list(manifest.skipped))


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "group", "split"])
        for r in manifest.records:
            w.writerow([r.path, r.label, r.group, r.split])


def read_manifest(path, class_names) -> DatasetManifest:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["path", "label", "group", "split"]:
            raise ConfigInvalid(f"unexpected manifest header {header} in {path}")
        for row in rd:
            path_, label, group, split = row
            label = int(label)
            if label not in (0, 1):
                raise BadLabel(f"label {label} in manifest row {path_!r}")
            records.append(Record(path_, label, group, split))
    return DatasetManifest(records, tuple(class_names))


def load_and_resize(path, target) -> np.ndarray:
    """Decode, bilinear-resize to (H, W), scale to [0,1] float32 (H, W, 3)."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            h, w = target
            img = img.resize((w, h), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32)
    except (UnidentifiedImageError, OSError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc
    return arr / np.float32(255.0)


@dataclass(frozen=True)
class AugmentSpec:
    horizontal_flip: bool = True
    vertical_flip: bool = True
    shear: float = 0.2              # radians, uniform in [-shear, shear]
    zoom: float = 0.2               # uniform factor in [1-zoom, 1+zoom]
    width_shift: float = 0.2        # fraction of width
    height_shift: float = 0.2       # fraction of height
    rotation_degrees: float = 40.0  # uniform in [-d, +d]
    fill_mode: str = "nearest"

    def __post_init__(self):
        for name in ("shear", "zoom", "width_shift", "height_shift", "rotation_degrees"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"augmentation factor {name} must be nonnegative")
        if self.fill_mode != "nearest":
            raise ConfigInvalid(f"unsupported fill_mode {self.fill_mode!r}")


def _bilinear_warp(image: np.ndarray, matrix: np.ndarray, shift) -> np.ndarray:
    """Sample image at A^-1 (p_out - c - t) + c for every output pixel.

    Out-of-range coordinates clamp to the nearest edge pixel.  The lerp is
    written as v0 + w*(v1 - v0) so a zero fraction reproduces v0 exactly,
    which keeps pure flips bit-identical involutions.
    """
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    inv = np.linalg.inv(matrix)
    ry = ys - cy - shift[0]
    rx = xs - cx - shift[1]
    sy = inv[0, 0] * ry + inv[0, 1] * rx + cy
    sx = inv[1, 0] * ry + inv[1, 1] * rx + cx

    y0 = np.floor(sy)
    x0 = np.floor(sx)
    wy = (sy - y0).astype(image.dtype)
    wx = (sx - x0).astype(image.dtype)
    y0 = np.clip(y0, 0, h - 1).astype(np.intp)
    x0 = np.clip(x0, 0, w - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    v00 = image[y0, x0]
    v01 = image[y0, x1]
    v10 = image[y1, x0]
    v11 = image[y1, x1]
    wy = wy[:, :, None]
    wx = wx[:, :, None]
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    return top + wy * (bot - top)


def augment(image: np.ndarray, spec: AugmentSpec, rng) -> np.ndarray:
    """One randomized affine transform composed of the enabled pieces.

    Parameters are drawn in a fixed order (hflip, vflip, shear, zoom,
    shifts, rotation); disabled transforms draw nothing, so the stream
    consumption pattern is itself deterministic.
    """
    h, w = image.shape[:2]
    flip_y = flip_x = 1.0
    if spec.horizontal_flip and rng.random() < 0.5:
        flip_x = -1.0
    if spec.vertical_flip and rng.random() < 0.5:
        flip_y = -1.0
    shear = rng.uniform(-spec.shear, spec.shear) if spec.shear else 0.0
    zoom = rng.uniform(1 - spec.zoom, 1 + spec.zoom) if spec.zoom else 1.0
    ty = rng.uniform(-spec.height_shift, spec.height_shift) * h if spec.height_shift else 0.0
    tx = rng.uniform(-spec.width_shift, spec.width_shift) * w if spec.width_shift else 0.0
    if spec.rotation_degrees:
        theta = math.radians(rng.uniform(-spec.rotation_degrees, spec.rotation_degrees))
    else:
        theta = 0.0

    if flip_x == 1.0 and flip_y == 1.0 and not (shear or ty or tx or theta) and zoom == 1.0:
        return image

    # Row/column convention: axis 0 is y, axis 1 is x.
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    shr = np.array([[1.0, -math.sin(shear)],
                    [0.0, math.cos(shear)]])
    zf = np.array([[zoom, 0.0], [0.0, zoom]])
    flip = np.array([[flip_y, 0.0], [0.0, flip_x]])
    matrix = rot @ shr @ zf @ flip
    return _bilinear_warp(image, matrix, (ty, tx))


def one_hot(labels, n_classes=2) -> np.ndarray:
    out = np.zeros((len(labels), n_classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def batch_iterator(manifest: DatasetManifest, split, batch_size, input_size,
                   augment_spec=None, seed=0, epoch=0):
    """Yield (images Tensor (b,H,W,3), one-hot labels Tensor (b,2)).

    Train order is a per-epoch seeded shuffle and each image gets its own
    augmentation stream keyed by (seed, epoch, record index); val and test
    run in manifest order with no augmentation.  Unreadable files are
    skipped with a warning.
    """
    if batch_size < 1:
        raise ConfigInvalid(f"batch_size must be >= 1, got {batch_size}")
    rows = [(i, r) for i, r in enumerate(manifest.records) if r.split == split]
    if split == "train":
        order = stream(seed, "shuffle", epoch).permutation(len(rows))
        rows = [rows[i] for i in order]

    images, labels = [], []
    for idx, rec in rows:
        try:
            img = load_and_resize(rec.path, input_size)
        except UnreadableImage as exc:
            warnings.warn(f"skipping unreadable image: {exc}")
            continue
        if split == "train" and augment_spec is not None:
            img = augment(img, augment_spec, stream(seed, "augment", epoch, idx))
        images.append(img)
        labels.append(rec.label)
        if len(images) == batch_size:
            yield Tensor(np.stack(images)), Tensor(one_hot(labels))
            images, labels = [], []
    if images:
        yield Tensor(np.stack(images)), Tensor(one_hot(labels))
