"""Binary portable pixmap (P6, maxval 255) reading and writing."""

from __future__ import annotations

import os
import tempfile

import numpy as np


def _tokens(buf: bytes, count: int):
    """Parse ``count`` whitespace-separated header tokens, skipping comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PPM header")
        out.append(buf[i:j])
        i = j
    return out, i + 1  # single whitespace byte ends the header


def decode_ppm(buf: bytes) -> np.ndarray:
    """Return a ``(3, H, W)`` float64 array in [0, 1]."""
    (magic, w, h, maxval), start = _tokens(buf, 4)
    if magic != b"P6":
        raise ValueError(f"not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=start) if len(buf) >= start + w * h * 3 else None
    if data is None:
        raise ValueError("truncated PPM pixel data")
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_ppm(image) -> bytes:
    """Encode a ``(3, H, W)`` array in [0, 1] (values are clipped and rounded)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {img.shape}")
    _, h, w = img.shape
    pix = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return b"P6\n%d %d\n255\n" % (w, h) + pix.tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ppm(path, image) -> None:
    atomic_write_bytes(path, encode_ppm(image))
