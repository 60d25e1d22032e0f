"""Procedural fine-grained texture dataset.

Each image is a cluttered background with one soft elliptical "lesion". The
class is carried only by the lesion's texture: stripes whose orientation is
set by the class (with jitter), so channel co-occurrence statistics inside
the lesion are discriminative while the background carries distractor
stripes of random orientation at lower contrast.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..core.rng import derive_seed, make_rng
from .manifest import DatasetManifest, Entry
from .ppm import write_ppm


@dataclass
class SynthDataset:
    images: np.ndarray   # (N, 3, H, W) in [0, 1]
    labels: np.ndarray   # (N,) int64
    classes: list

    def __len__(self):
        return len(self.labels)

    def counts(self):
        return np.bincount(self.labels, minlength=len(self.classes))


@dataclass(frozen=True)
class SynthParams:
    jitter: float = 12.0           # degrees of orientation jitter per image
    noise: float = 0.12            # pixel noise std
    background_contrast: float = 0.18
    lesion_contrast: float = 0.35
    radius: tuple = (5.5, 9.0)


def class_counts(classes: int, per_class: int, ratios=None) -> list:
    """Per-class counts; ``ratios`` (e.g. 9:3:1:1) scale ``per_class`` exactly."""
    if ratios is None:
        return [per_class] * classes
    if len(ratios) != classes:
        raise ValueError("one ratio per class required")
    return [int(r) * per_class for r in ratios]


def _render(label, n_classes, size, rng, p: SynthParams):
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.3, 0.6, size=3)
    img = np.broadcast_to(base[:, None, None], (3, h, w)).copy()

    bg_theta = rng.uniform(0, np.pi)
    bg_freq = rng.uniform(0.15, 0.3)
    bg_phase = rng.uniform(0, 2 * np.pi)
    bg = np.sin(2 * np.pi * bg_freq * (xx * np.cos(bg_theta) + yy * np.sin(bg_theta)) + bg_phase)
    img += p.background_contrast * bg * rng.uniform(0.5, 1.0, size=3)[:, None, None]

    cy, cx = rng.uniform(size * 0.3, size * 0.7, size=2)
    ry, rx = rng.uniform(*p.radius, size=2)
    rot = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(rot) + dy * np.sin(rot)
    v = -dx * np.sin(rot) + dy * np.cos(rot)
    mask = 1.0 / (1.0 + np.exp(4.0 * (np.sqrt((u / rx) ** 2 + (v / ry) ** 2) - 1.0)))

    theta = np.pi * label / n_classes + np.deg2rad(rng.uniform(-p.jitter, p.jitter))
    freq = rng.uniform(0.2, 0.3)
    phase = rng.uniform(0, 2 * np.pi)
    stripes = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    tint = rng.uniform(0.6, 1.0, size=3)
    lesion = 0.5 + p.lesion_contrast * stripes[None] * tint[:, None, None]
    img = img * (1 - mask) + lesion * mask
    img += rng.normal(0.0, p.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_generate(classes: int = 4, per_class: int = 100, size: int = 32, seed: int = 0,
                   ratios=None, params: SynthParams = SynthParams()) -> SynthDataset:
    """Generate a shuffled dataset; identical for identical arguments."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    counts = class_counts(classes, per_class, ratios)
    images, labels = [], []
    for c, n in enumerate(counts):
        for i in range(n):
            rng = make_rng(derive_seed(seed, "synth", c, i))
            images.append(_render(c, classes, size, rng, params))
            labels.append(c)
    order = make_rng(derive_seed(seed, "synth-order")).permutation(len(labels))
    return SynthDataset(
        np.stack(images)[order],
        np.asarray(labels, dtype=np.int64)[order],
        [f"class{c}" for c in range(classes)],
    )


def write_dataset(ds: SynthDataset, directory, split: str = "") -> DatasetManifest:
    """Write images as PPM files plus a manifest; returns the manifest (unsaved)."""
    entries = []
    for i, (img, y) in enumerate(zip(ds.images, ds.labels)):
        rel = f"images/{ds.classes[y]}/{split or 'img'}_{i:05d}.ppm"
        write_ppm(os.path.join(directory, rel), img)
        entries.append(Entry(rel, ds.classes[y], split))
    return DatasetManifest(entries, list(ds.classes), os.fspath(directory))
