"""Synthetic shape generators used by the test suite, the benchmark and the demo dataset."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .datasets import LabeledDataset

SHAPE_FAMILIES = ("sphere", "cube", "disk")


def sphere_surface(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def cube_surface(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    face_axis = rng.integers(0, 3, size=n)
    pts[np.arange(n), face_axis] = rng.choice([-1.0, 1.0], size=n)
    return pts


def planar_disk(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    r = np.sqrt(rng.uniform(0.0, 1.0, size=n))
    t = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(t), r * np.sin(t), np.zeros(n)])


_GENERATORS = {"sphere": sphere_surface, "cube": cube_surface, "disk": planar_disk}


def sample_shape(family: str, n: int, rng: np.random.Generator, jitter: float = 0.01) -> NDArray[np.float64]:
    """One cloud of ``family`` with a random offset, scale and small Gaussian jitter."""
    pts = _GENERATORS[family](n, rng)
    pts = pts * rng.uniform(0.5, 2.0) + rng.uniform(-1.0, 1.0, size=3)
    return pts + jitter * rng.normal(size=pts.shape)


def make_synthetic_dataset(
    per_class: int,
    points: int = 1024,
    seed: int = 0,
    families: tuple[str, ...] = SHAPE_FAMILIES,
    split_name: str = "synthetic",
) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    clouds, labels = [], []
    for label, fam in enumerate(families):
        for _ in range(per_class):
            clouds.append(sample_shape(fam, points, rng))
            labels.append(label)
    return LabeledDataset(np.stack(clouds).astype(np.float32), np.array(labels), families, split_name)


def make_synthetic_splits(
    per_class_train: int = 20, per_class_test: int = 20, points: int = 1024, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    train = make_synthetic_dataset(per_class_train, points, seed, split_name="synthetic/train")
    test = make_synthetic_dataset(per_class_test, points, seed + 1, split_name="synthetic/test")
    return train, test
