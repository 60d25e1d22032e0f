import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dacbnet import oracles
from dacbnet.bilinear import bilinear_pool
from dacbnet.core.rng import make_rng
from dacbnet.data import (
    HAM10000_CLASSES,
    AugmentSpec,
    DatasetManifest,
    Entry,
    ManifestError,
    SplitSpec,
    SynthParams,
    apply_params,
    augment,
    balance_to,
    decode_ppm,
    encode_ppm,
    load_manifest,
    parse_manifest,
    read_ppm,
    split,
    synth_generate,
    write_dataset,
    write_ppm,
)

HEADER = "path,label,split,source,transform\n"


def _manifest(counts, split_name=""):
    entries = [Entry(f"{c}/{i:05d}.ppm", c, split_name) for c, n in counts.items() for i in range(n)]
    return DatasetManifest(entries, list(counts))


# -- manifests ---------------------------------------------------------------

def test_empty_manifest():
    with pytest.raises(ManifestError, match="no entries"):
        parse_manifest(HEADER)
    with pytest.raises(ManifestError, match="no entries"):
        parse_manifest("")


def test_ham10000_classes_accepted():
    text = HEADER + "".join(f"img/{c}.ppm,{c},,,\n" for c in HAM10000_CLASSES)
    m = parse_manifest(text, classes=HAM10000_CLASSES)
    assert m.classes == ["BCC", "BKL", "DF", "MEL", "NV", "VASC", "AKIEC"]
    assert all(v == 1 for v in m.counts().values())


def test_duplicate_path_with_conflicting_labels():
    with pytest.raises(ManifestError, match="duplicate"):
        parse_manifest(HEADER + "a.ppm,x,,,\na.ppm,y,,,\n")


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ManifestError, match="line 3"):
        parse_manifest(HEADER + "a.ppm,x,,,\nb.ppm,x\n")
    with pytest.raises(ManifestError, match="unknown label"):
        parse_manifest(HEADER + "a.ppm,x,,,\n", classes=["y"])


def test_missing_files_listed(tmp_path):
    (tmp_path / "m.csv").write_text(HEADER + "a.ppm,x,,,\nb.ppm,x,,,\n")
    with pytest.raises(ManifestError, match="a.ppm, b.ppm"):
        load_manifest(tmp_path / "m.csv")


# -- splitting ---------------------------------------------------------------

def test_split_70_15_15_per_class():
    m = split(_manifest({"a": 100, "b": 100, "c": 100}), SplitSpec((0.7, 0.15, 0.15), seed=3))
    for name, n in (("train", 70), ("val", 15), ("test", 15)):
        assert m.counts(name) == {"a": n, "b": n, "c": n}


def test_split_all_train():
    m = split(_manifest({"a": 10, "b": 7}), SplitSpec((1.0, 0.0, 0.0)))
    assert all(e.split == "train" for e in m.entries)


def test_split_is_seeded():
    base = _manifest({"a": 30, "b": 20})
    a = split(base, SplitSpec(seed=1)).entries
    assert a == split(base, SplitSpec(seed=1)).entries
    assert a != split(base, SplitSpec(seed=2)).entries


@given(st.lists(st.integers(1, 60), min_size=2, max_size=5), st.integers(0, 1000))
def test_split_stratified_within_one(sizes, seed):
    counts = {f"c{i}": n for i, n in enumerate(sizes)}
    m = split(_manifest(counts), SplitSpec(seed=seed))
    for c, n in counts.items():
        for name, frac in zip(("train", "val", "test"), (0.7, 0.15, 0.15)):
            assert abs(m.counts(name)[c] - frac * n) <= 1
        assert sum(m.counts(s)[c] for s in ("train", "val", "test")) == n


# -- balancing ---------------------------------------------------------------

def test_skewed_classes_balance_to_1750():
    m = balance_to(_manifest({"DF": 115, "NV": 6705, "VASC": 142}, "train"), 1750)
    assert m.counts("train") == {"DF": 1750, "NV": 1750, "VASC": 1750}
    df = [e for e in m.entries if e.label == "DF"]
    assert sum(e.augmented for e in df) == 1750 - 115
    assert all(e.source.startswith("DF/") and e.transform for e in df if e.augmented)
    assert not any(e.augmented for e in m.entries if e.label == "NV")


def test_balance_fixed_point():
    base = _manifest({"a": 20, "b": 20}, "train")
    assert balance_to(base, 20).entries == base.entries


def test_balance_is_seeded():
    base = _manifest({"a": 5, "b": 30}, "train")
    assert balance_to(base, 12, seed=4).entries == balance_to(base, 12, seed=4).entries
    assert balance_to(base, 12, seed=4).entries != balance_to(base, 12, seed=5).entries


def test_balance_touches_only_train_and_rejects_empty_class():
    m = split(_manifest({"a": 40, "b": 10}), SplitSpec(seed=0))
    out = balance_to(m, 50)
    assert out.counts("val") == m.counts("val") and out.counts("test") == m.counts("test")
    assert not any(e.augmented for e in out.entries if e.split in ("val", "test"))
    with pytest.raises(ManifestError):
        balance_to(DatasetManifest([Entry("x.ppm", "a", "train")], ["a", "b"]), 5)


def test_augmented_entries_follow_their_source_in_resplit():
    m = balance_to(_manifest({"a": 20, "b": 4}, "train"), 20)
    out = split(m, SplitSpec(seed=9))
    train_sources = {e.path for e in out.subset("train")}
    assert all(e.split == "train" and e.source in train_sources for e in out.entries if e.augmented)


def test_materialized_and_lazy_augmentation_agree(tmp_path):
    ds = synth_generate(2, 3, size=12, seed=1)
    m = write_dataset(ds, tmp_path, split="train")
    eager = balance_to(m, 5, seed=2, materialize=True)
    added = [e for e in eager.entries if e.augmented]
    written = [read_ppm(eager.resolve(e)) for e in added]
    lazy = balance_to(m, 5, seed=2)
    assert lazy.entries == eager.entries
    for e, img in zip(added, written):
        os.remove(lazy.resolve(e))
        # files are quantized to 8 bits; the rebuild is not
        assert np.max(np.abs(lazy.load_image(e) - img)) <= 0.5 / 255 + 1e-12
    imgs, labels = lazy.load_arrays("train")
    assert imgs.shape == (10, 3, 12, 12) and np.bincount(labels).tolist() == [5, 5]


# -- augmentation ------------------------------------------------------------

def test_identity_transform():
    img = make_rng(0).random((3, 8, 8))
    out = apply_params(img, {"rotation": 0.0, "zoom": 1.0, "hflip": False, "vflip": False})
    assert np.max(np.abs(out - img)) < 1e-12


def test_hflip_twice_is_exact():
    img = make_rng(1).random((3, 5, 7))
    assert np.array_equal(apply_params(apply_params(img, {"hflip": True}), {"hflip": True}), img)


def test_rotation_90_matches_index_oracle():
    img = np.arange(48.0).reshape(3, 4, 4) / 48
    assert np.max(np.abs(apply_params(img, {"rotation": 90.0}) - oracles.rotate90(img))) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_augment_deterministic_and_clamped(seed):
    img = make_rng(seed).random((3, 8, 8))
    a = augment(img, AugmentSpec(), seed)
    assert np.array_equal(a, augment(img, AugmentSpec(), seed))
    assert a.min() >= 0 and a.max() <= 1


# -- synthetic data ----------------------------------------------------------

def test_separable_two_class_linear_probe():
    ds = synth_generate(2, 40, 32, seed=0, params=SynthParams(jitter=0, noise=0, background_contrast=0))
    gray = ds.images.mean(axis=1, keepdims=True)
    dx, dy = np.diff(gray, axis=3)[:, :, :-1, :], np.diff(gray, axis=2)[:, :, :, :-1]
    grads = np.concatenate([dx, dy], axis=1)
    feats = np.c_[bilinear_pool(grads, grads), np.ones(len(ds))]
    w = np.linalg.lstsq(feats, 2.0 * ds.labels - 1, rcond=None)[0]
    assert np.mean((feats @ w > 0) == ds.labels) == 1.0


def test_synth_same_seed_same_data():
    a, b = synth_generate(3, 5, 16, seed=7), synth_generate(3, 5, 16, seed=7)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, synth_generate(3, 5, 16, seed=8).images)


def test_synth_imbalance_ratio():
    ds = synth_generate(4, 5, 8, seed=0, ratios=(9, 3, 1, 1))
    assert ds.counts().tolist() == [45, 15, 5, 5]
    assert ds.images.min() >= 0 and ds.images.max() <= 1


# -- PPM ---------------------------------------------------------------------

def test_ppm_round_trip(tmp_path):
    img = make_rng(0).random((3, 6, 5))
    write_ppm(tmp_path / "x.ppm", img)
    back = read_ppm(tmp_path / "x.ppm")
    assert back.shape == (3, 6, 5) and np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12
    assert np.array_equal(decode_ppm(encode_ppm(back)), back)


def test_ppm_header_comments_and_errors():
    assert decode_ppm(b"P6\n# note\n1 1\n255\n\x00\x80\xff")[:, 0, 0].tolist() == [0.0, 128 / 255, 1.0]
    with pytest.raises(ValueError):
        decode_ppm(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        decode_ppm(b"P6\n2 2\n255\n\x00")
