"""Dataset ingestion, deterministic stratified splitting, and augmentation.

Datasets live on disk as one subdirectory per class containing images
(`root/<class_name>/*.{png,jpg,jpeg,ppm}`). Class order is the sorted
subdirectory names. Pixels are float32 RGB in [0, 1].

Binary PPM (P6, 8-bit) is decoded in-house so test fixtures need no imaging
dependency; PNG/JPEG go through Pillow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".ppm"}


class DatasetError(RuntimeError):
    """Raised when a dataset directory cannot produce a usable dataset."""


class SplitError(RuntimeError):
    """Raised when a stratified split is impossible (a class is too small)."""


@dataclass
class LabeledImage:
    pixels: np.ndarray        # HxWx3 float32 in [0, 1]
    label: int
    source_path: str


@dataclass
class Dataset:
    items: list[LabeledImage]
    class_names: list[str]
    split_seed: int = 0

    def __len__(self) -> int:
        return len(self.items)

    def labels(self) -> np.ndarray:
        return np.array([item.label for item in self.items], dtype=np.int64)


@dataclass
class NormStats:
    mean: np.ndarray          # per-channel, shape (3,)
    std: np.ndarray           # per-channel, shape (3,), strictly positive


@dataclass(frozen=True)
class AugmentPolicy:
    enabled: bool = True
    flip_prob: float = 0.5
    max_rotation: float = 0.1   # radians


# ---------------------------------------------------------------------------
# PPM (P6) codec


def read_ppm(path) -> np.ndarray:
    """Decode a binary P6 PPM into an HxWx3 float32 array in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4 and i < len(raw):
        c = raw[i:i + 1]
        if c == b"#":                      # comment runs to end of line
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace():
                j += 1
            tokens.append(raw[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] != b"P6":
        raise DatasetError(f"{path}: not a binary P6 PPM")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise DatasetError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    i += 1                                 # single whitespace after maxval
    expected = width * height * 3
    if len(raw) - i < expected:
        raise DatasetError(
            f"{path}: truncated pixel data ({len(raw) - i} of {expected} bytes)")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=i)
    return pixels.reshape(height, width, 3).astype(np.float32) / 255.0


def write_ppm(path, image: np.ndarray) -> None:
    """Write an HxWx3 float array in [0, 1] as binary P6, 8-bit."""
    h, w = image.shape[0], image.shape[1]
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def decode_image(path) -> np.ndarray:
    """Decode one image file to HxWx3 float32 in [0, 1] (PPM in-house, rest via Pillow)."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    from PIL import Image
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


# ---------------------------------------------------------------------------
# loading and splitting


def load_dataset(root) -> Dataset:
    """Load a class-per-folder image tree; folder name is the label."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) < 2:
        raise DatasetError(f"{root}: need at least 2 class directories, found {len(class_dirs)}")

    items: list[LabeledImage] = []
    class_names = [p.name for p in class_dirs]
    for label, class_dir in enumerate(class_dirs):
        count = 0
        for path in sorted(class_dir.iterdir()):
            if path.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            try:
                pixels = decode_image(path)
            except Exception as exc:
                log.warning("skipping undecodable image %s: %s", path, exc)
                continue
            items.append(LabeledImage(pixels=pixels, label=label, source_path=str(path)))
            count += 1
        if count == 0:
            raise DatasetError(f"class {class_dir.name!r} has no decodable images")
    return Dataset(items=items, class_names=class_names)


def stratified_split(dataset: Dataset, test_fraction: float, seed: int
                     ) -> tuple[Dataset, Dataset]:
    """Per-class shuffle with `seed`, then round(n * fraction) items go to test."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.Generator(np.random.PCG64(seed))
    test_idx: set[int] = set()
    for label, name in enumerate(dataset.class_names):
        idx = [i for i, item in enumerate(dataset.items) if item.label == label]
        if len(idx) < 2:
            raise SplitError(f"class {name!r} has {len(idx)} item(s); need at least 2 to split")
        n_test = int(math.floor(len(idx) * test_fraction + 0.5))
        perm = rng.permutation(len(idx))
        test_idx.update(idx[j] for j in perm[:n_test])

    train_items = [it for i, it in enumerate(dataset.items) if i not in test_idx]
    test_items = [it for i, it in enumerate(dataset.items) if i in test_idx]
    return (Dataset(train_items, list(dataset.class_names), split_seed=seed),
            Dataset(test_items, list(dataset.class_names), split_seed=seed))


# ---------------------------------------------------------------------------
# geometry


def _axis_coords(n_src: int, n_dst: int) -> np.ndarray:
    # align-corners mapping: exact grid points stay fixed
    if n_dst == 1:
        return np.zeros(1)
    return np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))


def _bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample image at fractional (ys, xs) grids with edge clamping."""
    h, w = image.shape[0], image.shape[1]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[..., None]
    wx = (xs - x0).astype(np.float32)[..., None]
    top = image[y0, x0] * (1.0 - wx) + image[y0, x1] * wx
    bot = image[y1, x0] * (1.0 - wx) + image[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


def resize(image: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize to a target x target square; values stay in [0, 1]."""
    if target < 1:
        raise ValueError(f"resize target must be >= 1, got {target}")
    image = np.asarray(image, dtype=np.float32)
    ys = _axis_coords(image.shape[0], target)
    xs = _axis_coords(image.shape[1], target)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(image, grid_y, grid_x)


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1, :])


def rotate(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the image center, bilinear resampling, edge-clamp fill."""
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[0], image.shape[1]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = rows - cy, cols - cx
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    src_y = cy + cos_a * dy + sin_a * dx
    src_x = cx - sin_a * dy + cos_a * dx
    return _bilinear_sample(image, src_y, src_x)


def augment(image: np.ndarray, rng: np.random.Generator,
            policy: AugmentPolicy = AugmentPolicy()) -> np.ndarray:
    """Random horizontal flip then a small random rotation (train mode only)."""
    if not policy.enabled:
        return image
    out = image
    if rng.random() < policy.flip_prob:
        out = hflip(out)
    angle = rng.uniform(-policy.max_rotation, policy.max_rotation)
    return rotate(out, angle)


# ---------------------------------------------------------------------------
# normalization


def compute_norm_stats(train: Dataset, image_size: int) -> NormStats:
    """Per-channel mean/std over every resized training pixel."""
    if len(train) == 0:
        raise DatasetError("cannot compute normalization stats of an empty dataset")
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for item in train.items:
        img = resize(item.pixels, image_size).astype(np.float64)
        total += img.sum(axis=(0, 1))
        total_sq += (img * img).sum(axis=(0, 1))
        count += img.shape[0] * img.shape[1]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.sqrt(var)
    std = np.where(std <= 0.0, 1e-6, std)
    return NormStats(mean=mean.astype(np.float32), std=std.astype(np.float32))


def normalize(image: np.ndarray, stats: NormStats) -> np.ndarray:
    return ((image - stats.mean) / stats.std).astype(np.float32)


def denormalize(image: np.ndarray, stats: NormStats) -> np.ndarray:
    return (image * stats.std + stats.mean).astype(np.float32)
