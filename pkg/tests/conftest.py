"""Shared fixtures: synthetic flat-color datasets in memory and on disk."""

import numpy as np
import pytest

from patchcraft.data import Dataset, LabeledImage, write_ppm
from patchcraft.vit import ViTConfig

SOIL_CLASSES = ["alluvial", "black", "clay", "red"]
CLASS_COLORS = {
    "alluvial": (0.85, 0.70, 0.45),
    "black": (0.08, 0.08, 0.10),
    "clay": (0.75, 0.35, 0.25),
    "red": (0.55, 0.12, 0.10),
}


def make_flat_dataset(n_per_class: int = 8, size: int = 16) -> Dataset:
    """4 classes x n images, one flat color per class; linearly separable."""
    items = []
    for label, name in enumerate(SOIL_CLASSES):
        color = CLASS_COLORS[name]
        for i in range(n_per_class):
            img = np.full((size, size, 3), color, dtype=np.float32)
            items.append(LabeledImage(pixels=img, label=label,
                                      source_path=f"mem://{name}/{i}"))
    return Dataset(items=items, class_names=list(SOIL_CLASSES))


def write_flat_tree(root, n_per_class: int = 8, size: int = 16):
    """Write the flat-color dataset as a class-per-folder PPM tree."""
    root.mkdir(parents=True, exist_ok=True)
    for name in SOIL_CLASSES:
        class_dir = root / name
        class_dir.mkdir()
        img = np.full((size, size, 3), CLASS_COLORS[name], dtype=np.float32)
        for i in range(n_per_class):
            write_ppm(class_dir / f"{name}_{i:02d}.ppm", img)
    return root


def tiny_config(**overrides) -> ViTConfig:
    """Smallest config that exercises every model component."""
    base = dict(image_size=16, patch_size=8, projection_dim=8, num_heads=2,
                num_layers=2, num_classes=4, head_hidden=(16, 8))
    base.update(overrides)
    return ViTConfig(**base)


@pytest.fixture
def flat_dataset() -> Dataset:
    return make_flat_dataset()


@pytest.fixture
def flat_tree(tmp_path):
    return write_flat_tree(tmp_path / "soil")
