"""Functional forward/backward kernels on float64 numpy arrays.

Feature maps use the ``(B, C, H, W)`` layout. Every ``*_forward`` returns the
output together with whatever cache its ``*_backward`` partner needs.
Convolution follows cross-correlation semantics (the kernel is not flipped).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LN_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(x, *, name: str = "tensor") -> np.ndarray:
    """Convert to a contiguous float64 array and reject NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return arr


# -- matmul ------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    return a @ b


def matmul_backward(dout, a, b):
    return dout @ b.T, a.T @ dout


# -- convolution -------------------------------------------------------------

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, b=None, stride: int = 1, pad: int = 0, groups: int = 1):
    """2-D cross-correlation.

    ``w`` has shape ``(Co, C // groups, k, k)``. Only ``groups == 1`` (dense)
    and ``groups == C == Co`` (depthwise) are supported.
    """
    B, C, H, W = x.shape
    Co, Cg, kh, kw = w.shape
    if kh != kw:
        raise DimensionError("only square kernels are supported")
    k = kh
    if groups not in (1, C) or C // groups != Cg:
        raise DimensionError(f"weight {w.shape} incompatible with {C} input channels, groups={groups}")
    if groups > 1 and Co != C:
        raise DimensionError("depthwise convolution requires Co == C")
    if H + 2 * pad < k or W + 2 * pad < k:
        raise DimensionError(f"kernel {k} larger than padded input {(H + 2 * pad, W + 2 * pad)}")
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x

    if groups > 1:
        out = np.zeros((B, C, Ho, Wo))
        for i in range(k):
            for j in range(k):
                out += xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] * w[:, 0, i, j][:, None, None]
        cols = None
    elif k == 1:
        xs = xp[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        out = np.tensordot(w[:, :, 0, 0], xs, axes=([1], [1])).transpose(1, 0, 2, 3)
        cols = None
    else:
        cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        # (B, Ho, Wo, C, k, k) so the contraction is one contiguous GEMM
        cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * k * k)
        out = (cols @ w.reshape(Co, -1).T).reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    return out, (xp, x.shape, w, cols, stride, pad, groups)


def conv2d_backward(dout, cache):
    """Return ``(dx, dw, db)``."""
    xp, x_shape, w, cols, stride, pad, groups = cache
    B, C, H, W = x_shape
    Co, Cg, k, _ = w.shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    db = dout.sum(axis=(0, 2, 3))

    def window(a, i, j):
        return a[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]

    dxp = np.zeros(xp.shape)
    if groups > 1:
        dw = np.zeros(w.shape)
        for i in range(k):
            for j in range(k):
                dw[:, 0, i, j] = np.einsum("bchw,bchw->c", dout, window(xp, i, j))
                window(dxp, i, j)[...] += dout * w[:, 0, i, j][:, None, None]
    elif k == 1:
        xs = window(xp, 0, 0)
        dw = np.tensordot(dout, xs, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        window(dxp, 0, 0)[...] = np.tensordot(w[:, :, 0, 0], dout, axes=([0], [1])).transpose(1, 0, 2, 3)
    else:
        d2 = dout.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, Co)
        dw = (d2.T @ cols).reshape(w.shape)
        dcols = (d2 @ w.reshape(Co, -1)).reshape(B, Ho, Wo, C, k, k).transpose(4, 5, 3, 0, 1, 2)
        dxt = np.zeros((C, B) + xp.shape[2:])
        for i in range(k):
            for j in range(k):
                dxt[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[i, j]
        dxp = dxt.transpose(1, 0, 2, 3)
    dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


# -- pooling -----------------------------------------------------------------

def pool2d_forward(x, kind: str, k: int, stride: int):
    B, C, H, W = x.shape
    if k < 1 or stride < 1 or k > H or k > W:
        raise DimensionError(f"pool window {k} does not fit input {(H, W)}")
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pool kind {kind!r}")
    Ho, Wo = _out_size(H, k, stride, 0), _out_size(W, k, stride, 0)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    win = win.reshape(B, C, Ho, Wo, k * k)
    if kind == "avg":
        return win.mean(axis=-1), (x.shape, kind, k, stride, None)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, kind, k, stride, arg)


def pool2d_backward(dout, cache):
    x_shape, kind, k, stride, arg = cache
    B, C, Ho, Wo = dout.shape
    dx = np.zeros(x_shape)
    if kind == "avg":
        share = dout / (k * k)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += share
        return dx
    # route each gradient to the recorded argmax
    for i in range(k):
        for j in range(k):
            hit = arg == i * k + j
            dx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += np.where(hit, dout, 0.0)
    return dx


def global_avg_pool(x):
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(dout, x_shape):
    H, W = x_shape[2], x_shape[3]
    return np.broadcast_to(dout / (H * W), x_shape).copy()


def global_max_pool_forward(x):
    B, C, H, W = x.shape
    flat = x.reshape(B, C, H * W)
    arg = flat.argmax(axis=-1)
    return np.take_along_axis(flat, arg[..., None], axis=-1).reshape(B, C, 1, 1), (x.shape, arg)


def global_max_pool_backward(dout, cache):
    x_shape, arg = cache
    B, C, H, W = x_shape
    dx = np.zeros((B, C, H * W))
    np.put_along_axis(dx, arg[..., None], dout.reshape(B, C, 1), axis=-1)
    return dx.reshape(x_shape)


# -- activations -------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


def softmax(logits):
    """Row-wise softmax over the class axis of a ``(B, P)`` array."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dout, y):
    return y * (dout - (dout * y).sum(axis=1, keepdims=True))


def activation(x, kind: str):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- layer normalization -----------------------------------------------------

def layer_norm_forward(x, gamma=None, beta=None, eps: float = LN_EPS):
    """Normalize each sample over all non-batch axes.

    ``gamma``/``beta`` broadcast over ``x.shape[1:]`` when given.
    """
    axes = tuple(range(1, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out, (xhat, inv, gamma, beta is not None)


def layer_norm_backward(dout, cache):
    """Return ``(dx, dgamma, dbeta)``; affine grads are None when absent."""
    xhat, inv, gamma, has_beta = cache
    axes = tuple(range(1, xhat.ndim))
    n = np.prod(xhat.shape[1:])
    dgamma = (dout * xhat).sum(axis=0) if gamma is not None else None
    dbeta = dout.sum(axis=0) if has_beta else None
    dxhat = dout * gamma if gamma is not None else dout
    dx = inv / n * (
        n * dxhat
        - dxhat.sum(axis=axes, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
    )
    return dx, dgamma, dbeta
