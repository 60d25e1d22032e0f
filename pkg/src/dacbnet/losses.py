"""Classification losses: cross entropy, complement cross entropy, focal, BCE.

Each loss takes class probabilities (softmax rows, or per-class sigmoid scores
for BCE) and integer labels, and returns ``(value, d value / d probabilities)``.
:func:`loss_from_logits` chains the output activation for training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ops

KINDS = ("ce", "bce", "focal", "cce")
_TINY = 1e-300


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    kind: str = "cce"
    classes: int = 2
    beta: float = -1.0
    gamma: float = 2.0
    alpha: tuple | None = None
    eps: float = 1e-12

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.classes < 2:
            raise ValueError("loss needs at least 2 classes")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.gamma < 0:
            raise ValueError("focal gamma must be non-negative")
        if self.alpha is not None and len(self.alpha) != self.classes:
            raise ValueError("alpha needs one weight per class")

    @property
    def output_activation(self) -> str:
        return "sigmoid" if self.kind == "bce" else "softmax"


def check_prediction(probs, labels, tol: float = 1e-9):
    """Validate a batch of softmax rows and integer labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise InputError(f"probabilities {probs.shape} and labels {labels.shape} do not align")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InputError("label out of range")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > tol):
        raise InputError("rows must be non-negative and sum to 1")
    return probs, labels.astype(np.int64)


def _check_labels(probs, labels):
    labels = np.asarray(labels)
    if labels.shape != (probs.shape[0],):
        raise InputError(f"probabilities {probs.shape} and labels {labels.shape} do not align")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InputError("label out of range")
    return labels.astype(np.int64)


def cross_entropy(probs, labels, eps: float = 1e-12):
    labels = _check_labels(probs, labels)
    n = len(labels)
    rows = np.arange(n)
    pg = probs[rows, labels]
    value = -np.mean(np.log(pg + eps))
    grad = np.zeros_like(probs)
    grad[rows, labels] = -1.0 / (n * (pg + eps))
    return float(value), grad


def complement_entropy(probs, labels, eps: float = 1e-12):
    """Mean entropy of the renormalized wrong-class distribution (0 log 0 = 0)."""
    labels = _check_labels(probs, labels)
    n, P = probs.shape
    rows = np.arange(n)
    pg = probs[rows, labels]
    q = (1.0 - pg + eps)[:, None]
    p = probs / q
    wrong = np.ones_like(probs, dtype=bool)
    wrong[rows, labels] = False
    live = (pg < 1.0 - eps)[:, None]
    mask = wrong & live
    logp = np.log(np.maximum(p, _TINY))
    terms = np.where(mask & (p > 0), -p * logp, 0.0)
    value = terms.sum() / n

    dh_dp = np.where(mask, -(logp + 1.0), 0.0)
    grad = dh_dp / q
    grad[rows, labels] = (dh_dp * p).sum(axis=1) / q[:, 0]
    return float(value), grad / n


def cce_total(probs, labels, cfg: LossConfig):
    """Cross entropy plus ``beta / (P - 1)`` times complement entropy."""
    P = probs.shape[1]
    if P < 2:
        raise ValueError("complement cross entropy needs P >= 2")
    ce, g_ce = cross_entropy(probs, labels, cfg.eps)
    if cfg.beta == 0:
        return ce, g_ce
    comp, g_comp = complement_entropy(probs, labels, cfg.eps)
    w = cfg.beta / (P - 1)
    return ce + w * comp, g_ce + w * g_comp


def focal_loss(probs, labels, cfg: LossConfig):
    labels = _check_labels(probs, labels)
    n = len(labels)
    rows = np.arange(n)
    pg = probs[rows, labels]
    alpha = np.ones(probs.shape[1]) if cfg.alpha is None else np.asarray(cfg.alpha, dtype=np.float64)
    a = alpha[labels]
    log_p = np.log(pg + cfg.eps)
    mod = (1.0 - pg) ** cfg.gamma
    value = -np.mean(a * mod * log_p)
    d = mod / (pg + cfg.eps)
    if cfg.gamma:
        d = d - cfg.gamma * (1.0 - pg) ** (cfg.gamma - 1.0) * log_p
    grad = np.zeros_like(probs)
    grad[rows, labels] = -a * d / n
    return float(value), grad


def bce(scores, targets, eps: float = 1e-12):
    """Mean binary cross entropy over all ``N * P`` entries."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != scores.shape:
        raise InputError(f"targets {targets.shape} vs scores {scores.shape}")
    if not np.all((targets == 0) | (targets == 1)):
        raise InputError("targets must be 0 or 1")
    m = scores.size
    value = -np.mean(targets * np.log(scores + eps) + (1 - targets) * np.log(1 - scores + eps))
    grad = (-targets / (scores + eps) + (1 - targets) / (1 - scores + eps)) / m
    return float(value), grad


def one_hot(labels, classes):
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def compute_loss(probs, labels, cfg: LossConfig):
    """Dispatch on ``cfg.kind``; ``probs`` are sigmoid scores when kind is bce."""
    if cfg.kind == "ce":
        return cross_entropy(probs, labels, cfg.eps)
    if cfg.kind == "cce":
        return cce_total(probs, labels, cfg)
    if cfg.kind == "focal":
        return focal_loss(probs, labels, cfg)
    return bce(probs, one_hot(_check_labels(probs, labels), probs.shape[1]), cfg.eps)


def output_probs(logits, cfg: LossConfig):
    return ops.sigmoid(logits) if cfg.kind == "bce" else ops.softmax(logits)


def loss_from_logits(logits, labels, cfg: LossConfig):
    """Return ``(loss, probs, d loss / d logits)``."""
    probs = output_probs(logits, cfg)
    value, dp = compute_loss(probs, labels, cfg)
    if cfg.kind == "bce":
        return value, probs, ops.sigmoid_backward(dp, probs)
    return value, probs, ops.softmax_backward(dp, probs)
