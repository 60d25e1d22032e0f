"""Dataset manifests: loading, stratified splitting and class balancing.

A manifest is a UTF-8 CSV with header ``path,label,split,source,transform``.
Paths are relative to the manifest's directory. ``source`` and ``transform``
are empty for original images and record the parent image and augmentation
parameters for generated ones.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from ..core.rng import derive_seed, make_rng
from .augment import AugmentSpec, apply_params, describe, sample_params
from .ppm import atomic_write_bytes, read_ppm, write_ppm

log = logging.getLogger(__name__)

HEADER = ["path", "label", "split", "source", "transform"]
SPLITS = ("train", "val", "test", "")
HAM10000_CLASSES = ["BCC", "BKL", "DF", "MEL", "NV", "VASC", "AKIEC"]


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    path: str
    label: str
    split: str = ""
    source: str = ""
    transform: str = ""

    @property
    def augmented(self) -> bool:
        return bool(self.source)


@dataclass
class DatasetManifest:
    entries: list
    classes: list
    root: str = "."

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.entries:
            raise ManifestError("no entries")
        known = set(self.classes)
        seen = {}
        for e in self.entries:
            if e.label not in known:
                raise ManifestError(f"unknown label {e.label!r} for {e.path}")
            if e.split not in SPLITS:
                raise ManifestError(f"unknown split {e.split!r} for {e.path}")
            if e.augmented and e.split in ("val", "test"):
                raise ManifestError(f"augmented entry {e.path} assigned to {e.split}")
            if seen.setdefault(e.path, e.label) != e.label:
                raise ManifestError(f"duplicate path {e.path} with conflicting labels")

    def label_index(self, label: str) -> int:
        return self.classes.index(label)

    def subset(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def counts(self, split: str | None = None) -> dict:
        out = {c: 0 for c in self.classes}
        for e in self.entries:
            if split is None or e.split == split:
                out[e.label] += 1
        return out

    def resolve(self, entry: Entry) -> str:
        return os.path.join(self.root, entry.path)

    def load_image(self, entry: Entry) -> np.ndarray:
        """Decode one image; unmaterialized augmented entries are rebuilt from provenance."""
        path = self.resolve(entry)
        if entry.augmented and not os.path.exists(path):
            parent = read_ppm(os.path.join(self.root, entry.source))
            return apply_params(parent, json.loads(entry.transform))
        return read_ppm(path)

    def load_arrays(self, split: str):
        """Decode every image of ``split`` into ``(images, labels)``."""
        subset = self.subset(split)
        if not subset:
            raise ManifestError(f"split {split!r} is empty")
        images = np.stack([self.load_image(e) for e in subset])
        labels = np.array([self.label_index(e.label) for e in subset], dtype=np.int64)
        return images, labels

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for e in self.entries:
            w.writerow([e.path, e.label, e.split, e.source, e.transform])
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_csv().encode("utf-8"))


def relocate(manifest: DatasetManifest, root) -> DatasetManifest:
    """Same entries with paths rewritten relative to a new manifest directory."""
    root = os.path.abspath(root)

    def rel(path):
        return os.path.relpath(os.path.join(manifest.root, path), root).replace(os.sep, "/") if path else path

    entries = [replace(e, path=rel(e.path), source=rel(e.source)) for e in manifest.entries]
    return DatasetManifest(entries, list(manifest.classes), root)


def parse_manifest(text: str, classes=None, root: str = ".") -> DatasetManifest:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ManifestError("no entries")
    if [c.strip() for c in rows[0]] != HEADER:
        raise ManifestError(f"line 1: expected header {','.join(HEADER)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(HEADER):
            raise ManifestError(f"line {lineno}: expected {len(HEADER)} fields, got {len(row)}")
        entries.append(Entry(*(c.strip() for c in row)))
    if not entries:
        raise ManifestError("no entries")
    if classes is None:
        classes = sorted({e.label for e in entries})
    return DatasetManifest(entries, list(classes), root)


def load_manifest(path, classes=None, check_files: bool = True) -> DatasetManifest:
    """Read and validate a manifest; missing image files are reported together."""
    with open(path, encoding="utf-8") as fh:
        manifest = parse_manifest(fh.read(), classes, root=os.path.dirname(os.path.abspath(path)))
    if check_files:
        missing = [
            e.path for e in manifest.entries
            if not os.path.exists(manifest.resolve(e))
            and not (e.augmented and os.path.exists(os.path.join(manifest.root, e.source)))
        ]
        if missing:
            raise ManifestError(f"{len(missing)} missing image file(s): {', '.join(missing[:10])}")
    return manifest


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.7, 0.15, 0.15)
    seed: int = 0
    folds: int | None = None

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        object.__setattr__(self, "fractions", f)
        if len(f) != 3 or min(f) < 0 or abs(sum(f) - 1.0) > 1e-9:
            raise ValueError("split fractions must be three non-negative numbers summing to 1")


def _split_counts(n: int, fractions) -> tuple:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """Stratified random train/val/test assignment of the original images.

    Augmented entries are kept only if their source lands in train.
    """
    originals = [e for e in manifest.entries if not e.augmented]
    by_class = {c: [e for e in originals if e.label == c] for c in manifest.classes}
    assigned = {}
    for c, items in by_class.items():
        if not items:
            continue
        counts = _split_counts(len(items), spec.fractions)
        wanted = sum(1 for f in spec.fractions if f > 0)
        if len(items) < wanted:
            log.warning("class %s has %d samples for %d split slots; assignment is best effort", c, len(items), wanted)
        order = make_rng(derive_seed(spec.seed, "split", c)).permutation(len(items))
        names = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
        for idx, name in zip(order, names):
            assigned[items[idx].path] = name
    entries = []
    for e in manifest.entries:
        if e.augmented:
            if assigned.get(e.source) == "train":
                entries.append(replace(e, split="train"))
        else:
            entries.append(replace(e, split=assigned[e.path]))
    return DatasetManifest(entries, manifest.classes, manifest.root)


def kfold(manifest: DatasetManifest, folds: int, seed: int = 0):
    """Yield ``folds`` stratified manifests; fold ``i`` tests on the i-th class slice."""
    originals = [e for e in manifest.entries if not e.augmented]
    fold_of = {}
    for c in manifest.classes:
        items = [e for e in originals if e.label == c]
        order = make_rng(derive_seed(seed, "kfold", c)).permutation(len(items))
        for rank, idx in enumerate(order):
            fold_of[items[idx].path] = rank % folds
    for i in range(folds):
        yield DatasetManifest(
            [replace(e, split="test" if fold_of[e.path] == i else "train") for e in originals],
            manifest.classes, manifest.root,
        )


def balance_to(manifest: DatasetManifest, target: int, spec: AugmentSpec = AugmentSpec(),
               seed: int = 0, materialize: bool = False) -> DatasetManifest:
    """Bring every class of the train split to exactly ``target`` entries.

    Larger classes are subsampled by a seeded shuffle; smaller ones gain
    augmented copies of their train images, with provenance recorded. With
    ``materialize`` the augmented images are written next to the manifest.
    """
    if target < 1:
        raise ValueError("target must be positive")
    train = manifest.subset("train")
    keep, added = set(), []
    for c in manifest.classes:
        items = [e for e in train if e.label == c and not e.augmented]
        if not items:
            raise ManifestError(f"class {c!r} has no training images")
        rng = make_rng(derive_seed(seed, "balance", c))
        if len(items) >= target:
            keep.update(items[i].path for i in rng.permutation(len(items))[:target])
            continue
        keep.update(e.path for e in items)
        for k in range(target - len(items)):
            parent = items[int(rng.integers(len(items)))]
            params = sample_params(spec, derive_seed(seed, "augment", c, k))
            stem = os.path.splitext(os.path.basename(parent.path))[0]
            path = f"aug/{c}/{stem}_aug{k:05d}.ppm"
            if materialize:
                write_ppm(os.path.join(manifest.root, path), apply_params(read_ppm(manifest.resolve(parent)), params))
            added.append(Entry(path, c, "train", parent.path, describe(params)))
    # original order is preserved; augmented entries go last
    out = [e for e in manifest.entries if e.split != "train" or e.path in keep]
    return DatasetManifest(out + added, manifest.classes, manifest.root)
