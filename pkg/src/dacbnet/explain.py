"""Grad-CAM attention heat maps and colour overlays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.layers import Tap
from .data.ppm import atomic_write_bytes, write_ppm


class InputError(ValueError):
    pass


@dataclass
class HeatMap:
    values: np.ndarray  # (H, W) in [0, 1]
    layer: str
    target_class: int
    raw: np.ndarray | None = None  # ReLU'd map at feature resolution


def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation weights with half-pixel centres and edge clamping."""
    src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def upsample_bilinear(a, size) -> np.ndarray:
    h, w = a.shape
    return _resize_matrix(size[0], h) @ a @ _resize_matrix(size[1], w).T


def minmax(a) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def _tap(model, layer_id) -> Tap:
    try:
        tap = model.find(layer_id)
    except KeyError:
        raise InputError(f"no layer named {layer_id!r}") from None
    if not isinstance(tap, Tap):
        raise InputError(f"{layer_id!r} is not a feature-map tap")
    return tap


def class_gradient(model, image, layer_id: str, target: int):
    """Activation ``A`` of the tapped layer and ``d logit[target] / dA``."""
    tap = _tap(model, layer_id)
    x = np.asarray(image, dtype=np.float64)[None]
    logits = model.forward(x)
    if not 0 <= target < logits.shape[1]:
        raise InputError(f"class {target} out of range")
    a = tap.activation
    if a.ndim != 4:
        raise InputError(f"{layer_id!r} output is not spatial")
    d = np.zeros_like(logits)
    d[0, target] = 1.0
    model.backward(d)
    return a[0].copy(), tap.gradient[0].copy()


def grad_cam(model, image, layer_id: str, target: int) -> HeatMap:
    """Weight each channel by its spatially averaged gradient, ReLU, upsample, normalize."""
    a, g = class_gradient(model, image, layer_id, target)
    alpha = g.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, a, axes=1), 0.0)
    size = np.asarray(image).shape[1:]
    up = cam if cam.shape == tuple(size) else upsample_bilinear(cam, size)
    return HeatMap(np.clip(minmax(up), 0.0, 1.0), layer_id, target, cam)


def colormap(values) -> np.ndarray:
    """Blue (0) to red (1): returns ``(3, H, W)``."""
    v = np.clip(values, 0.0, 1.0)
    return np.stack([v, np.zeros_like(v), 1.0 - v])


def overlay(heatmap: HeatMap, image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape[1:] != heatmap.values.shape:
        raise InputError(f"heatmap {heatmap.values.shape} vs image {image.shape[1:]}")
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    return 0.5 * image + 0.5 * colormap(heatmap.values)


def render_overlay(heatmap: HeatMap, image, path) -> np.ndarray:
    """Blend the heat map onto ``image``, write a P6 file, return the blend."""
    blend = overlay(heatmap, image)
    write_ppm(path, blend)
    return blend


def write_heatmap_csv(heatmap: HeatMap, path) -> None:
    text = "\n".join(",".join(repr(float(v)) for v in row) for row in heatmap.values) + "\n"
    atomic_write_bytes(path, text.encode())
