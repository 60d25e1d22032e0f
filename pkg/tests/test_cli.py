import csv
import json
import time

import numpy as np
import pytest

from dacbnet import cli
from dacbnet.core import ops
from dacbnet.data import SplitSpec, SynthParams, read_ppm, split, synth_generate, write_dataset

TINY_MODEL = {
    "stream_a": {"kind": "residual", "widths": [8, 8, 16], "input_size": [16, 16]},
    "stream_b": {"kind": "separable", "widths": [8, 8, 16], "input_size": [16, 16]},
    "sketch": {"d": 64},
}


def _write_config(path, manifest, output, epochs, **train):
    cfg = {"model": TINY_MODEL, "train": {"epochs": epochs, "batch_size": 8, "lr": 1e-2, **train},
           "data": {"manifest": str(manifest)}, "output": str(output)}
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def easy_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("easy")
    ds = synth_generate(2, 20, 16, seed=0, params=SynthParams(jitter=0, noise=0, background_contrast=0))
    m = split(write_dataset(ds, root), SplitSpec((0.6, 0.2, 0.2), seed=0))
    m.save(root / "manifest.csv")
    return root / "manifest.csv"


@pytest.fixture(scope="module")
def trained(easy_data, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = _write_config(root / "cfg.json", easy_data, root / "out", 50)
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return root


# -- train -------------------------------------------------------------------

def test_fifty_epoch_run_writes_fifty_history_rows(trained):
    lines = (trained / "out" / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(lines) == 51 and lines[-1].startswith("50,")
    for name in ("resolved_config.json", "manifest.csv", "last.ckpt", "best.ckpt"):
        assert (trained / "out" / name).exists()
    resolved = json.loads((trained / "out" / "resolved_config.json").read_text())
    assert resolved["model"]["classes"] == 2 and resolved["train"]["loss"]["kind"] == "cce"


def test_rerun_gives_identical_history_bytes(easy_data, tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = _write_config(tmp_path / f"{name}.json", easy_data, tmp_path / name, 3)
        assert cli.main(["train", "--config", str(cfg), "--seed", "7"]) == 0
        outs.append((tmp_path / name / "history.csv").read_bytes())
    assert outs[0] == outs[1]


def test_missing_manifest_exits_2_naming_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "manifest.csv"
    cfg = _write_config(tmp_path / "cfg.json", missing, tmp_path / "out", 1)
    assert cli.main(["train", "--config", str(cfg)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_config_key_exits_2(easy_data, tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json", easy_data, tmp_path / "out", 1, bogus=1)
    assert cli.main(["train", "--config", str(cfg)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_flag_overrides_reach_resolved_config(easy_data, tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", easy_data, tmp_path / "out", 5)
    assert cli.main(["train", "--config", str(cfg), "--epochs", "1", "--loss", "focal",
                     "--set", "train.lr=0.005"]) == 0
    resolved = json.loads((tmp_path / "out" / "resolved_config.json").read_text())
    assert resolved["train"]["epochs"] == 1 and resolved["train"]["loss"]["kind"] == "focal"
    assert resolved["train"]["lr"] == 0.005


# -- eval --------------------------------------------------------------------

def test_eval_of_perfect_classifier(trained, easy_data, tmp_path, capsys):
    hist = np.loadtxt(trained / "out" / "history.csv", delimiter=",", skiprows=1)
    assert hist[:, 4].max() == 1.0  # the easy set is learned perfectly
    args = ["eval", "--checkpoint", str(trained / "out" / "best.ckpt"), "--manifest", str(easy_data),
            "--split", "val", "--out", str(tmp_path / "ev")]
    assert cli.main(args) == 0
    report = capsys.readouterr().out
    assert "accuracy 1.0000 over 8 samples" in report
    first = {p.name: p.read_bytes() for p in (tmp_path / "ev").iterdir()}
    assert cli.main(args) == 0
    assert {p.name: p.read_bytes() for p in (tmp_path / "ev").iterdir()} == first


def test_confusion_totals_equal_split_size(trained, easy_data, tmp_path):
    assert cli.main(["eval", "--checkpoint", str(trained / "out" / "last.ckpt"), "--manifest", str(easy_data),
                     "--split", "test", "--out", str(tmp_path)]) == 0
    cm = np.loadtxt(tmp_path / "confusion.csv", delimiter=",")
    n_test = sum(1 for row in csv.DictReader(open(easy_data)) if row["split"] == "test")
    assert cm.sum() == n_test == 8


# -- cam ---------------------------------------------------------------------

def test_cam_writes_overlays(trained, easy_data, tmp_path):
    image = next(easy_data.parent.glob("images/class1/*.ppm"))
    assert cli.main(["cam", "--checkpoint", str(trained / "out" / "best.ckpt"), "--image", str(image),
                     "--class", "class1", "--name", "x", "--out", str(tmp_path)]) == 0
    for stream in ("stream_a", "stream_b"):
        assert read_ppm(tmp_path / f"x_{stream}_cam.ppm").shape == (3, 16, 16)
        vals = np.loadtxt(tmp_path / f"x_{stream}_cam.csv", delimiter=",")
        assert vals.shape == (16, 16) and vals.min() >= 0 and vals.max() <= 1


# -- ablate ------------------------------------------------------------------

TINY_SPEC = {"ratios": [3, 1], "classes": 2, "train_unit": 8, "val_unit": 4, "test_unit": 4, "size": 16,
             "widths": [8, 8, 16], "sketch_d": 64, "epochs": 1, "batch_size": 8}


def _ablate(tmp_path, variants):
    (tmp_path / "spec.json").write_text(json.dumps(TINY_SPEC))
    assert cli.main(["ablate", "--variants", variants, "--config", str(tmp_path / "spec.json"),
                     "--seeds", "0", "--out", str(tmp_path)]) == 0
    return list(csv.DictReader(open(tmp_path / "comparison.csv")))


def test_two_variant_ablation_rows_share_data(tmp_path):
    rows = _ablate(tmp_path, "residual+separable:dam:compact:cce,residual+residual:none:exact:cce")
    assert len(rows) == 2 and rows[0]["data_hash"] == rows[1]["data_hash"]
    assert (tmp_path / "summary.csv").exists() and (tmp_path / "resolved_config.json").exists()


def test_loss_swap_rows_differ_only_in_loss(tmp_path):
    rows = _ablate(tmp_path, "residual+separable:dam:compact:ce,residual+separable:dam:compact:focal")
    assert [r["loss"] for r in rows] == ["ce", "focal"]
    assert rows[0]["variant"].rsplit(":", 1)[0] == rows[1]["variant"].rsplit(":", 1)[0]
    assert rows[0]["data_hash"] == rows[1]["data_hash"] and rows[0]["seed"] == rows[1]["seed"]


def test_bad_variant_exits_2(tmp_path):
    assert cli.main(["ablate", "--variants", "resnet:dam", "--out", str(tmp_path)]) == 2


# -- verify ------------------------------------------------------------------

def test_verify_clean_build(capsys):
    start = time.perf_counter()
    assert cli.main(["verify"]) == 0
    assert time.perf_counter() - start < 300
    out = capsys.readouterr().out
    for suite in ("gradients", "bilinear", "sketch", "losses", "metrics"):
        assert f"{suite}: " in out and "FAIL" not in out


def test_verify_detects_injected_gradient_bug(monkeypatch, capsys):
    real = ops.relu_backward
    monkeypatch.setattr(ops, "relu_backward", lambda *a, **k: 1.05 * real(*a, **k))
    assert cli.main(["verify", "--suite", "gradients"]) != 0
    assert "FAIL" in capsys.readouterr().out


# -- synth / augment / environment ------------------------------------------

def test_synth_and_augment(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path), "--classes", "4", "--per-class", "2", "--ratios", "9,3,1,1",
                     "--size", "8", "--split", "1,0,0"]) == 0
    assert cli.main(["augment", "--manifest", str(tmp_path / "manifest.csv"), "--target", "6",
                     "--out", str(tmp_path / "balanced.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "balanced.csv")))
    counts = {c: sum(r["label"] == c for r in rows) for c in ("class0", "class1", "class2", "class3")}
    assert counts == {c: 6 for c in counts}


def test_invalid_thread_env_exits_2(monkeypatch):
    monkeypatch.setenv("DACB_THREADS", "zero")
    assert cli.main(["verify", "--suite", "losses"]) == 2
