"""Brute-force reference implementations.

Plain loops, deliberately independent of the vectorized kernels they check.
Used by the test suite and by ``dacb verify``.
"""

from __future__ import annotations

import math

import numpy as np


def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    B, C, H, W = x.shape
    Co, Cg, k, _ = w.shape
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + H, pad:pad + W] = x
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, Co, Ho, Wo))
    per_group = Co // groups
    for n in range(B):
        for o in range(Co):
            g = o // per_group
            for i in range(Ho):
                for j in range(Wo):
                    s = 0.0
                    for c in range(Cg):
                        for u in range(k):
                            for v in range(k):
                                s += xp[n, g * Cg + c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[n, o, i, j] = s + (b[o] if b is not None else 0.0)
    return out


def pool2d(x, kind, k, stride):
    B, C, H, W = x.shape
    Ho, Wo = (H - k) // stride + 1, (W - k) // stride + 1
    out = np.zeros((B, C, Ho, Wo))
    for n in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    vals = [x[n, c, i * stride + u, j * stride + v] for u in range(k) for v in range(k)]
                    out[n, c, i, j] = max(vals) if kind == "max" else sum(vals) / len(vals)
    return out


def global_avg_pool(x):
    B, C, H, W = x.shape
    out = np.zeros((B, C, 1, 1))
    for n in range(B):
        for c in range(C):
            s = 0.0
            for i in range(H):
                for j in range(W):
                    s += x[n, c, i, j]
            out[n, c, 0, 0] = s / (H * W)
    return out


def bilinear_pool(fa, fb):
    B, na, H, W = fa.shape
    nb = fb.shape[1]
    out = np.zeros((B, na * nb))
    for n in range(B):
        acc = np.zeros((na, nb))
        for i in range(H):
            for j in range(W):
                acc += np.outer(fa[n, :, i, j], fb[n, :, i, j])
        out[n] = acc.reshape(-1)
    return out


def eca(x, w, b):
    """Channel-loop ECA with zero padding."""
    B, C, H, W = x.shape
    k = len(w)
    pad = k // 2
    out = np.zeros_like(x)
    for n in range(B):
        g = [x[n, c].mean() for c in range(C)]
        for c in range(C):
            z = b
            for j in range(k):
                src = c + j - pad
                if 0 <= src < C:
                    z += w[j] * g[src]
            out[n, c] = x[n, c] / (1.0 + math.exp(-z))
    return out


def cross_entropy(probs, labels, eps=1e-12):
    return -sum(math.log(probs[i, labels[i]] + eps) for i in range(len(labels))) / len(labels)


def complement_entropy(probs, labels, eps=1e-12):
    total = 0.0
    for i, g in enumerate(labels):
        if probs[i, g] >= 1.0 - eps:
            continue
        q = 1.0 - probs[i, g] + eps
        h = 0.0
        for j in range(probs.shape[1]):
            if j == g:
                continue
            p = probs[i, j] / q
            if p > 0:
                h -= p * math.log(p)
        total += h
    return total / len(labels)


def bce(scores, targets, eps=1e-12):
    s = 0.0
    for i in range(scores.shape[0]):
        for j in range(scores.shape[1]):
            t, p = targets[i, j], scores[i, j]
            s -= t * math.log(p + eps) + (1 - t) * math.log(1 - p + eps)
    return s / scores.size


def confusion(y_true, y_pred, classes):
    cm = [[0] * classes for _ in range(classes)]
    for t, p in zip(y_true, y_pred):
        cm[int(t)][int(p)] += 1
    return np.array(cm)


def per_class_counts(y_true, y_pred, c):
    tp = fp = fn = tn = 0
    for t, p in zip(y_true, y_pred):
        if t == c and p == c:
            tp += 1
        elif t != c and p == c:
            fp += 1
        elif t == c and p != c:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def precision_recall_f1(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def mann_whitney_auc(scores, positive):
    """O(N^2) pairwise AUC with ties counted as one half."""
    pos = [s for s, y in zip(scores, positive) if y]
    neg = [s for s, y in zip(scores, positive) if not y]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def adam_scalar(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Scalar Adam with decoupled weight decay over a gradient sequence."""
    m = v = 0.0
    traj = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * (mh / (math.sqrt(vh) + eps)) - lr * wd * p
        traj.append(p)
    return traj


def rotate90(img):
    """Counter-clockwise quarter turn of a (C, H, W) square image by index mapping."""
    C, H, W = img.shape
    out = np.zeros_like(img)
    for c in range(C):
        for r in range(H):
            for q in range(W):
                out[c, r, q] = img[c, q, W - 1 - r]
    return out
