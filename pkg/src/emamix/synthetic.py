"""Bundled desk-scale benchmark: 10 classes of textured shapes at 32x32.

Class identity is carried by shape geometry alone; color, position,
scale, texture phase, distractor blobs, and noise are all nuisance
variation, so a classifier has to learn the geometry to generalize.
Every image is a pure function of (seed, split, index), which keeps the
dataset reproducible without storing anything on disk.
"""

from __future__ import annotations

import numpy as np
import torch

from .data import ArrayDataset
from .seeding import derive_rng

__all__ = ["CLASS_NAMES", "synthetic_image", "make_synthetic_dataset"]

CLASS_NAMES = (
    "circle",
    "square",
    "triangle",
    "ring",
    "plus",
    "cross",
    "hbars",
    "vbars",
    "diamond",
    "checker",
)


def _shape_mask(label: int, dx: np.ndarray, dy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask for one shape on normalized coordinates (unit radius)."""
    r = np.sqrt(dx * dx + dy * dy)
    box = np.maximum(np.abs(dx), np.abs(dy))
    if label == 0:
        return r <= 1.0
    if label == 1:
        return box <= 0.82
    if label == 2:
        return (dy <= 0.95) & (dy >= 2.0 * np.abs(dx) - 0.95)
    if label == 3:
        return (r <= 1.0) & (r >= 0.55)
    if label == 4:
        return ((np.abs(dx) <= 0.32) & (np.abs(dy) <= 1.0)) | (
            (np.abs(dy) <= 0.32) & (np.abs(dx) <= 1.0)
        )
    if label == 5:
        return ((np.abs(dx - dy) <= 0.42) | (np.abs(dx + dy) <= 0.42)) & (box <= 1.0)
    if label == 6:
        return (np.abs(dx) <= 1.0) & (
            (np.abs(dy - 0.55) <= 0.24) | (np.abs(dy + 0.55) <= 0.24)
        )
    if label == 7:
        return (np.abs(dy) <= 1.0) & (
            (np.abs(dx - 0.55) <= 0.24) | (np.abs(dx + 0.55) <= 0.24)
        )
    if label == 8:
        return np.abs(dx) + np.abs(dy) <= 1.0
    if label == 9:
        phase = rng.uniform(0.0, 2.0)
        cells = (np.floor(dx * 2.2 + phase) + np.floor(dy * 2.2 + phase)) % 2 == 0
        return (box <= 0.82) & cells
    raise ValueError(f"label must be in [0, 10), got {label}")


def synthetic_image(label: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """One [3, size, size] float32 image in [0, 1]."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)

    # Background: dark color with a soft directional gradient plus noise.
    bg = rng.uniform(0.02, 0.30, size=3)
    grad_dir = rng.uniform(-1.0, 1.0, size=2)
    grad = (grad_dir[0] * xs + grad_dir[1] * ys) / size * rng.uniform(0.0, 0.15)
    img = bg[:, None, None] + grad[None, :, :]

    # Nuisance placement and scale of the class shape.
    margin = 0.22 * size
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)
    radius = rng.uniform(0.18, 0.34) * size
    dx = (xs - cx) / radius
    dy = (ys - cy) / radius
    mask = _shape_mask(label, dx, dy, rng)

    # Foreground: bright random color, kept away from the background.
    fg = rng.uniform(0.45, 1.0, size=3)
    fg[rng.integers(0, 3)] = rng.uniform(0.75, 1.0)
    img = np.where(mask[None, :, :], fg[:, None, None], img)

    # Distractor blob with a random (class-independent) color.
    if rng.random() < 0.7:
        bx = rng.uniform(2, size - 2)
        by = rng.uniform(2, size - 2)
        br = rng.uniform(1.0, 2.5)
        blob = (xs - bx) ** 2 + (ys - by) ** 2 <= br * br
        blob_color = rng.uniform(0.2, 0.9, size=3)
        img = np.where(blob[None, :, :], blob_color[:, None, None], img)

    img = img + rng.normal(0.0, 0.045, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_synthetic_dataset(
    num_images: int, seed: int, split: str, num_classes: int = 10, size: int = 32
) -> ArrayDataset:
    """Balanced dataset: label of index i is i % num_classes."""
    if num_classes != len(CLASS_NAMES):
        raise ValueError(f"synthetic benchmark has {len(CLASS_NAMES)} classes")
    images = np.empty((num_images, 3, size, size), dtype=np.float32)
    labels = np.empty(num_images, dtype=np.int64)
    for i in range(num_images):
        label = i % num_classes
        rng = derive_rng(seed, "synthetic", split, i)
        images[i] = synthetic_image(label, rng, size)
        labels[i] = label
    return ArrayDataset(torch.from_numpy(images), labels, num_classes)
