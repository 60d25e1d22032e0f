"""Toy-scale ablation harness on the synthetic imbalanced texture set.

A variant is written ``streams:attention:pooling:loss``, e.g.
``residual+separable:dam:compact:cce``. Every variant of a comparison trains
on the same data (same seeds) and differs only in the named factors.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import BackboneSpec, FreezePolicy, ModelConfig, SketchConfig, build_dacb
from .data.synth import SynthParams, synth_generate
from .losses import LossConfig
from .metrics import evaluate_predictions
from .train import TrainConfig, TrainData, evaluate, train_loop

ATTENTION = ("dam", "none")
POOLING = ("compact", "exact")
LOSSES = ("ce", "bce", "focal", "cce")


@dataclass(frozen=True)
class Variant:
    streams: tuple = ("residual", "separable")
    attention: str = "dam"
    pooling: str = "compact"
    loss: str = "cce"

    def __post_init__(self):
        if self.attention not in ATTENTION or self.pooling not in POOLING or self.loss not in LOSSES:
            raise ValueError(f"unsupported variant {self}")

    @classmethod
    def parse(cls, text: str) -> "Variant":
        parts = text.strip().split(":")
        if len(parts) != 4:
            raise ValueError(f"variant {text!r} must look like streams:attention:pooling:loss")
        streams = tuple(parts[0].split("+"))
        if len(streams) != 2:
            raise ValueError(f"variant {text!r} needs two streams joined by '+'")
        return cls(streams, parts[1], parts[2], parts[3])

    @property
    def name(self) -> str:
        return f"{'+'.join(self.streams)}:{self.attention}:{self.pooling}:{self.loss}"


@dataclass(frozen=True)
class ExperimentSpec:
    classes: int = 4
    ratios: tuple = (9, 3, 1, 1)
    train_unit: int = 100   # 9:3:1:1 x 100 = 1400 training images
    val_unit: int = 15
    test_unit: int = 30
    size: int = 32
    synth: SynthParams = field(default_factory=SynthParams)
    widths: tuple = (16, 32, 64)
    blocks: tuple = (1, 1, 1)
    sketch_d: int = 512
    epochs: int = 12
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    freeze: float = 0.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        synth = SynthParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("synth", {}).items()})
        return cls(synth=synth, **{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def make_data(spec: ExperimentSpec, seed: int):
    gen = dict(classes=spec.classes, size=spec.size, ratios=spec.ratios, params=spec.synth)
    train = synth_generate(per_class=spec.train_unit, seed=seed * 3 + 1, **gen)
    val = synth_generate(per_class=spec.val_unit, seed=seed * 3 + 2, **gen)
    test = synth_generate(per_class=spec.test_unit, seed=seed * 3 + 3, **gen)
    return train, val, test


def data_hash(*datasets) -> str:
    h = hashlib.sha256()
    for ds in datasets:
        h.update(np.ascontiguousarray(ds.images).tobytes())
        h.update(np.ascontiguousarray(ds.labels).tobytes())
    return h.hexdigest()[:16]


def model_config(variant: Variant, spec: ExperimentSpec, seed: int) -> ModelConfig:
    streams = [
        BackboneSpec(kind=k, widths=spec.widths, blocks=spec.blocks, input_size=(spec.size, spec.size),
                     attention="final-dam" if variant.attention == "dam" else "none",
                     eca=variant.attention == "dam")
        for k in variant.streams
    ]
    return ModelConfig(streams[0], streams[1], SketchConfig(pooling=variant.pooling, d=spec.sketch_d),
                       classes=spec.classes, seed=seed)


def train_config(variant: Variant, spec: ExperimentSpec, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=spec.epochs, batch_size=spec.batch_size, lr=spec.lr, weight_decay=spec.weight_decay,
        loss=LossConfig(variant.loss, spec.classes), seed=seed, freeze=FreezePolicy(spec.freeze),
    )


def run_variant(variant: Variant, spec: ExperimentSpec, seed: int, data=None) -> dict:
    """Train one variant on one seed; returns a flat result row."""
    train, val, test = data or make_data(spec, seed)
    start = time.perf_counter()
    model = build_dacb(model_config(variant, spec, seed))
    cfg = train_config(variant, spec, seed)
    result = train_loop(model, TrainData(train.images, train.labels, val.images, val.labels), cfg)
    model.load_state_dict(result.best_params)
    _, acc, probs = evaluate(model, test.images, test.labels, cfg.loss, spec.batch_size)
    report = evaluate_predictions(probs, test.labels, test.classes)
    recalls = [c.recall for c in report.scores.per_class]
    counts = np.bincount(train.labels, minlength=spec.classes)
    minority = [c for c in range(spec.classes) if counts[c] == counts.min()]
    return {
        "variant": variant.name,
        "seed": seed,
        "loss": variant.loss,
        "test_acc": acc,
        "macro_f1": report.scores.macro.f1,
        "minority_recall": float(np.mean([recalls[c] for c in minority])),
        "recalls": recalls,
        "macro_auc": report.roc.macro_auc,
        "best_epoch": result.best_epoch,
        "epochs": spec.epochs,
        "seconds": time.perf_counter() - start,
        "data_hash": data_hash(train, val, test),
    }


def ablate(variants, spec: ExperimentSpec, seeds, progress=None) -> list:
    """Run every variant on every seed with identical data per seed."""
    rows = []
    for seed in seeds:
        data = make_data(spec, seed)
        for v in variants:
            row = run_variant(v, spec, seed, data)
            rows.append(row)
            if progress:
                progress(row)
    return rows


def summarize(rows) -> list:
    """Mean of the headline numbers per variant, in first-seen order."""
    out = {}
    for r in rows:
        out.setdefault(r["variant"], []).append(r)
    table = []
    for name, rs in out.items():
        table.append({
            "variant": name,
            "loss": rs[0]["loss"],
            "seeds": len(rs),
            "test_acc": float(np.mean([r["test_acc"] for r in rs])),
            "macro_f1": float(np.mean([r["macro_f1"] for r in rs])),
            "minority_recall": float(np.mean([r["minority_recall"] for r in rs])),
        })
    return table
