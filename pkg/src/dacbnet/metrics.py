"""Confusion matrix, precision/recall/F1, one-vs-rest ROC and AUC.

Zero-denominator metrics are reported as 0 with an ``undefined`` flag rather
than NaN. AUC uses the trapezoid rule over a threshold sweep of the unique
scores, which counts tied positive/negative pairs as one half.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .data.ppm import atomic_write_bytes


class InputError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true label, columns: predicted

    @property
    def classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c: int):
        """``(TP, FP, FN, TN)`` for class ``c``."""
        tp = int(self.counts[c, c])
        fp = int(self.counts[:, c].sum()) - tp
        fn = int(self.counts[c, :].sum()) - tp
        return tp, fp, fn, self.total - tp - fp - fn


def confusion(y_true, y_pred, classes: int) -> ConfusionMatrix:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise InputError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= classes):
            raise InputError("label out of range")
    counts = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(counts, (y_true.astype(np.int64), y_pred.astype(np.int64)), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    specificity: float
    undefined: tuple = ()


@dataclass
class PRF1:
    per_class: list
    macro: ClassScores
    micro: ClassScores
    accuracy: float


def _scores(tp, fp, fn, tn) -> ClassScores:
    p, up = _ratio(tp, tp + fp)
    r, ur = _ratio(tp, tp + fn)
    f, uf = _ratio(2 * p * r, p + r)
    s, us = _ratio(tn, tn + fp)
    flags = tuple(n for n, u in zip(("precision", "recall", "f1", "specificity"), (up, ur, uf, us)) if u)
    return ClassScores(p, r, f, s, flags)


def prf1(cm: ConfusionMatrix) -> PRF1:
    per = [_scores(*cm.one_vs_rest(c)) for c in range(cm.classes)]
    macro = ClassScores(
        float(np.mean([s.precision for s in per])),
        float(np.mean([s.recall for s in per])),
        float(np.mean([s.f1 for s in per])),
        float(np.mean([s.specificity for s in per])),
    )
    pooled = np.sum([cm.one_vs_rest(c) for c in range(cm.classes)], axis=0)
    micro = _scores(*pooled)
    acc, _ = _ratio(int(np.trace(cm.counts)), cm.total)
    return PRF1(per, macro, micro, acc)


def roc_curve(scores, positive):
    """ROC points ``(fpr, tpr)`` for a binary problem, thresholds at unique scores."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], positive[order]
    # last index of each run of equal scores
    cut = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[cut]
    fp = np.cumsum(~y)[cut]
    tpr = np.r_[0.0, tp / n_pos] if n_pos else np.r_[0.0, np.zeros(len(cut))]
    fpr = np.r_[0.0, fp / n_neg] if n_neg else np.r_[0.0, np.zeros(len(cut))]
    return fpr, tpr


def auc_binary(scores, positive):
    """Area under ROC, or None when one of the classes is absent."""
    positive = np.asarray(positive, dtype=bool)
    if positive.all() or not positive.any():
        return None
    fpr, tpr = roc_curve(scores, positive)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class RocReport:
    curves: list                  # per class (fpr, tpr)
    auc: list                     # per class, None when undefined
    micro_auc: float | None
    macro_auc: float | None
    omitted: list = field(default_factory=list)


def roc_auc(scores, y_true) -> RocReport:
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(y_true)
    if not np.all(np.isfinite(scores)):
        raise InputError("scores must be finite")
    n, P = scores.shape
    onehot = np.zeros((n, P), dtype=bool)
    onehot[np.arange(n), y_true] = True
    curves, aucs, omitted = [], [], []
    for c in range(P):
        curves.append(roc_curve(scores[:, c], onehot[:, c]))
        a = auc_binary(scores[:, c], onehot[:, c])
        aucs.append(a)
        if a is None:
            omitted.append(c)
    defined = [a for a in aucs if a is not None]
    macro = float(np.mean(defined)) if defined else None
    micro = auc_binary(scores.ravel(), onehot.ravel())
    return RocReport(curves, aucs, micro, macro, omitted)


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    scores: PRF1
    roc: RocReport
    class_names: list

    def to_text(self) -> str:
        s, names = self.scores, self.class_names
        w = max(len(n) for n in names + ["micro"])
        lines = [f"{'class':<{w}}  precision  recall     f1         specificity  auc"]
        for name, c, a in zip(names, s.per_class, self.roc.auc):
            auc = "n/a" if a is None else f"{a:.4f}"
            flag = f"  (undefined: {', '.join(c.undefined)})" if c.undefined else ""
            lines.append(f"{name:<{w}}  {c.precision:<9.4f}  {c.recall:<9.4f}  {c.f1:<9.4f}  {c.specificity:<11.4f}  {auc}{flag}")
        for label, c, a in (("macro", s.macro, self.roc.macro_auc), ("micro", s.micro, self.roc.micro_auc)):
            auc = "n/a" if a is None else f"{a:.4f}"
            lines.append(f"{label:<{w}}  {c.precision:<9.4f}  {c.recall:<9.4f}  {c.f1:<9.4f}  {c.specificity:<11.4f}  {auc}")
        lines.append(f"accuracy {s.accuracy:.4f} over {self.confusion.total} samples")
        lines.append("confusion (rows true, columns predicted):")
        lines.extend(" ".join(f"{v:6d}" for v in row) for row in self.confusion.counts)
        return "\n".join(lines) + "\n"

    def write(self, directory) -> list:
        """Write the text report and CSV files; returns the written paths."""
        paths = []

        def put(name, text):
            path = os.path.join(directory, name)
            atomic_write_bytes(path, text.encode("utf-8"))
            paths.append(path)

        put("report.txt", self.to_text())
        rows = ["class,precision,recall,f1"]
        rows += [f"{n},{c.precision!r},{c.recall!r},{c.f1!r}" for n, c in zip(self.class_names, self.scores.per_class)]
        put("metrics.csv", "\n".join(rows) + "\n")
        put("confusion.csv", "\n".join(",".join(map(str, r)) for r in self.confusion.counts) + "\n")
        for name, (fpr, tpr) in zip(self.class_names, self.roc.curves):
            put(f"roc_{name}.csv", "fpr,tpr\n" + "".join(f"{a!r},{b!r}\n" for a, b in zip(fpr, tpr)))
        return paths


def evaluate_predictions(probs, y_true, class_names) -> EvalReport:
    probs = np.asarray(probs)
    cm = confusion(y_true, probs.argmax(axis=1), probs.shape[1])
    return EvalReport(cm, prf1(cm), roc_auc(probs, y_true), list(class_names))
