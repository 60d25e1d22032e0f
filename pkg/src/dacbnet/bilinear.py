"""Exact and compact bilinear pooling with signed-sqrt / L2 normalization.

Two compact projections are provided. Both are frozen at construction and
fully determined by ``(kind, n_a, n_b, d, seed)``:

* ``random-maclaurin``: ``phi(a, b) = (W1 a) * (W2 b) / sqrt(d)`` with
  Rademacher sign matrices ``W1``, ``W2``.
* ``tensor-sketch``: circular convolution of the count sketches of ``a`` and
  ``b``, computed in the Fourier domain.

For either, ``E <phi(x, x), phi(y, y)> = <x, y>**2``; summing ``phi`` over
locations approximates the inner product of exact bilinear descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core.layers import Layer
from .core.ops import DimensionError
from .core.rng import make_rng

SQRT_EPS = 1e-12
NORM_EPS = 1e-12
KINDS = ("random-maclaurin", "tensor-sketch")


def bilinear_pool(fa, fb):
    """Sum over locations of the outer product ``fa(l) fb(l)^T``, flattened row-major."""
    if fa.shape[0] != fb.shape[0] or fa.shape[2:] != fb.shape[2:]:
        raise DimensionError(f"stream shapes {fa.shape} and {fb.shape} are not spatially aligned")
    B = fa.shape[0]
    return np.einsum("bihw,bjhw->bij", fa, fb, optimize=True).reshape(B, -1)


def bilinear_pool_backward(dout, fa, fb):
    B, na, nb = fa.shape[0], fa.shape[1], fb.shape[1]
    g = dout.reshape(B, na, nb)
    dfa = np.einsum("bij,bjhw->bihw", g, fb, optimize=True)
    dfb = np.einsum("bij,bihw->bjhw", g, fa, optimize=True)
    return dfa, dfb


def signed_sqrt(x):
    return np.sign(x) * np.sqrt(np.abs(x))


def signed_sqrt_backward(dout, x):
    return dout * 0.5 / np.sqrt(np.abs(x) + SQRT_EPS)


def l2_normalize(x):
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norm, NORM_EPS)


def l2_normalize_backward(dout, x):
    norm = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), NORM_EPS)
    y = x / norm
    active = np.linalg.norm(x, axis=1, keepdims=True) > NORM_EPS
    proj = (dout * y).sum(axis=1, keepdims=True)
    return np.where(active, (dout - y * proj) / norm, dout / norm)


@dataclass(frozen=True, eq=False)
class SketchProjection:
    """Frozen random feature map approximating the second-order polynomial kernel.

    ``check_compression`` enforces ``d < n_a * n_b``; kernel-approximation
    experiments on tiny inputs may switch it off.
    """

    kind: str
    n_a: int
    n_b: int
    d: int
    seed: int
    check_compression: bool = True
    arrays: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sketch kind {self.kind!r}")
        if min(self.n_a, self.n_b, self.d) < 1:
            raise ValueError("dimensions must be positive")
        if self.check_compression and self.d >= self.n_a * self.n_b:
            raise ValueError(f"d={self.d} must be below n_a*n_b={self.n_a * self.n_b}")
        rng = make_rng(self.seed)
        if self.kind == "random-maclaurin":
            w1 = rng.integers(0, 2, size=(self.d, self.n_a)) * 2.0 - 1.0
            w2 = rng.integers(0, 2, size=(self.d, self.n_b)) * 2.0 - 1.0
            arrays = {"w1": w1, "w2": w2}
        else:
            arrays = {
                "h_a": rng.integers(0, self.d, size=self.n_a),
                "h_b": rng.integers(0, self.d, size=self.n_b),
                "s_a": rng.integers(0, 2, size=self.n_a) * 2.0 - 1.0,
                "s_b": rng.integers(0, 2, size=self.n_b) * 2.0 - 1.0,
            }
            arrays["m_a"] = _count_sketch_matrix(arrays["h_a"], arrays["s_a"], self.d)
            arrays["m_b"] = _count_sketch_matrix(arrays["h_b"], arrays["s_b"], self.d)
        for a in arrays.values():
            a.setflags(write=False)
        object.__setattr__(self, "arrays", arrays)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_a": self.n_a, "n_b": self.n_b, "d": self.d, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SketchProjection":
        return cls(d["kind"], int(d["n_a"]), int(d["n_b"]), int(d["d"]), int(d["seed"]))


def _count_sketch_matrix(h, s, d):
    m = np.zeros((len(h), d))
    m[np.arange(len(h)), h] = s
    return m


def _flat_locations(f):
    B, n = f.shape[:2]
    return f.reshape(B, n, -1)


def compact_project(p: SketchProjection, fa, fb=None):
    """Per-location sketch summed over locations: ``(B, n, H, W) -> (B, d)``.

    ``fb`` defaults to ``fa`` (self-bilinear features).
    """
    out, _ = compact_project_forward(p, fa, fa if fb is None else fb)
    return out


def compact_project_forward(p: SketchProjection, fa, fb):
    if fa.shape[1] != p.n_a or fb.shape[1] != p.n_b:
        raise DimensionError(f"features ({fa.shape[1]}, {fb.shape[1]}) do not match projection ({p.n_a}, {p.n_b})")
    if fa.shape[0] != fb.shape[0] or fa.shape[2:] != fb.shape[2:]:
        raise DimensionError(f"stream shapes {fa.shape} and {fb.shape} are not spatially aligned")
    a, b = _flat_locations(fa), _flat_locations(fb)
    if p.kind == "random-maclaurin":
        pa = np.einsum("dn,bnl->bdl", p.arrays["w1"], a, optimize=True)
        pb = np.einsum("dn,bnl->bdl", p.arrays["w2"], b, optimize=True)
        out = (pa * pb).sum(axis=2) / np.sqrt(p.d)
        return out, (pa, pb, fa.shape, fb.shape)
    ca = np.einsum("nd,bnl->bdl", p.arrays["m_a"], a, optimize=True)
    cb = np.einsum("nd,bnl->bdl", p.arrays["m_b"], b, optimize=True)
    fa_hat = np.fft.rfft(ca, axis=1)
    fb_hat = np.fft.rfft(cb, axis=1)
    out = np.fft.irfft(fa_hat * fb_hat, n=p.d, axis=1).sum(axis=2)
    return out, (fa_hat, fb_hat, fa.shape, fb.shape)


def compact_project_backward(p: SketchProjection, dout, cache):
    if p.kind == "random-maclaurin":
        pa, pb, sa, sb = cache
        g = dout[:, :, None] / np.sqrt(p.d)
        da = np.einsum("dn,bdl->bnl", p.arrays["w1"], g * pb, optimize=True)
        db = np.einsum("dn,bdl->bnl", p.arrays["w2"], g * pa, optimize=True)
        return da.reshape(sa), db.reshape(sb)
    fa_hat, fb_hat, sa, sb = cache
    # gradient of a circular convolution is a circular correlation with the other operand
    g_hat = np.fft.rfft(dout, axis=1)[:, :, None]
    dca = np.fft.irfft(g_hat * np.conj(fb_hat), n=p.d, axis=1)
    dcb = np.fft.irfft(g_hat * np.conj(fa_hat), n=p.d, axis=1)
    da = np.einsum("nd,bdl->bnl", p.arrays["m_a"], dca, optimize=True)
    db = np.einsum("nd,bdl->bnl", p.arrays["m_b"], dcb, optimize=True)
    return da.reshape(sa), db.reshape(sb)


class _NormalizedPooling(Layer):
    """Two-input layer: pooling -> signed sqrt -> L2 normalization."""

    def forward(self, fa, fb):
        raw = self._pool(fa, fb)
        self._raw = raw
        self._sq = signed_sqrt(raw)
        return l2_normalize(self._sq)

    def backward(self, dout):
        d_sq = l2_normalize_backward(dout, self._sq)
        d_raw = signed_sqrt_backward(d_sq, self._raw)
        return self._unpool(d_raw)


class BilinearPooling(_NormalizedPooling):
    def __init__(self, name="bilinear"):
        super().__init__(name)

    def out_dim(self, n_a, n_b):
        return n_a * n_b

    def _pool(self, fa, fb):
        self._f = (fa, fb)
        return bilinear_pool(fa, fb)

    def _unpool(self, d):
        return bilinear_pool_backward(d, *self._f)


class CompactBilinearPooling(_NormalizedPooling):
    """The compact bilinear layer: sketch, signed sqrt, L2 normalize."""

    def __init__(self, projection: SketchProjection, name="cbp"):
        super().__init__(name)
        self.projection = projection

    def out_dim(self, n_a=None, n_b=None):
        return self.projection.d

    def _pool(self, fa, fb):
        out, self._cache = compact_project_forward(self.projection, fa, fb)
        return out

    def _unpool(self, d):
        return compact_project_backward(self.projection, d, self._cache)


def cbp_layer(fa, fb, p: SketchProjection):
    """Functional form of :class:`CompactBilinearPooling`."""
    return CompactBilinearPooling(p).forward(fa, fb)
