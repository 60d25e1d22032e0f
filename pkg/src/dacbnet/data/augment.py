"""Seeded geometric and photometric image augmentation.

Parameters are sampled once per image from an :class:`AugmentSpec` and a
seed, so ``augment(image, spec, seed)`` is a pure function. Geometric ops are
composed into a single affine map about the image centre and resampled with
bilinear interpolation and edge replication.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ..core.rng import make_rng


@dataclass(frozen=True)
class AugmentSpec:
    rotation: float = 30.0        # degrees, symmetric range
    zoom: tuple = (0.8, 1.2)
    vflip: bool = True
    hflip: bool = True
    brightness: tuple = (0.8, 1.2)
    shear: float = 15.0           # degrees, symmetric range
    width_shift: float = 0.1      # fraction of width
    height_shift: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "zoom", tuple(self.zoom))
        object.__setattr__(self, "brightness", tuple(self.brightness))
        if self.zoom[0] <= 0 or self.zoom[0] > self.zoom[1]:
            raise ValueError("invalid zoom range")
        if self.brightness[0] < 0 or self.brightness[0] > self.brightness[1]:
            raise ValueError("invalid brightness range")

    def to_dict(self):
        return asdict(self)


IDENTITY = {"rotation": 0.0, "zoom": 1.0, "shear": 0.0, "shift_x": 0.0, "shift_y": 0.0,
            "hflip": False, "vflip": False, "brightness": 1.0}


def sample_params(spec: AugmentSpec, seed: int) -> dict:
    rng = make_rng(seed)
    return {
        "rotation": float(rng.uniform(-spec.rotation, spec.rotation)),
        "zoom": float(rng.uniform(*spec.zoom)),
        "shear": float(rng.uniform(-spec.shear, spec.shear)),
        "shift_x": float(rng.uniform(-spec.width_shift, spec.width_shift)),
        "shift_y": float(rng.uniform(-spec.height_shift, spec.height_shift)),
        "hflip": bool(spec.hflip and rng.random() < 0.5),
        "vflip": bool(spec.vflip and rng.random() < 0.5),
        "brightness": float(rng.uniform(*spec.brightness)),
    }


def describe(params: dict) -> str:
    return json.dumps(params, sort_keys=True, separators=(",", ":"))


def _inverse_affine(params: dict, h: int, w: int):
    """Map output (row, col) to input coordinates: ``in = M @ out + offset``."""
    th = np.deg2rad(params["rotation"])
    sh = np.deg2rad(params["shear"])
    z = params["zoom"]
    # forward map in (row, col) space: rotate, shear, then zoom
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    shear = np.array([[1.0, 0.0], [np.tan(sh), 1.0]])
    fwd = z * rot @ shear
    inv = np.linalg.inv(fwd)
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([params["shift_y"] * h, params["shift_x"] * w])
    offset = centre - inv @ (centre + shift)
    return inv, offset


def apply_params(image, params: dict) -> np.ndarray:
    """Apply explicit augmentation parameters to a ``(C, H, W)`` image in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    _, h, w = img.shape
    p = {**IDENTITY, **params}
    out = img
    geometric = any(p[k] != IDENTITY[k] for k in ("rotation", "zoom", "shear", "shift_x", "shift_y"))
    if geometric:
        inv, offset = _inverse_affine(p, h, w)
        out = np.stack([
            ndimage.affine_transform(ch, inv, offset=offset, order=1, mode="nearest") for ch in img
        ])
    if p["hflip"]:
        out = out[:, :, ::-1]
    if p["vflip"]:
        out = out[:, ::-1, :]
    if p["brightness"] != 1.0:
        out = out * p["brightness"]
    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


def augment(image, spec: AugmentSpec, seed: int) -> np.ndarray:
    return apply_params(image, sample_params(spec, seed))
