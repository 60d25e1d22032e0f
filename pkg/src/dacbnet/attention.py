"""Channel, spatial and dual attention, plus ECA.

All blocks take and return ``(B, C, H, W)`` maps; the gates they compute are
sigmoid outputs in (0, 1). The dual block computes both gates from its input
in parallel and, by default, applies them by broadcast multiplication with a
residual add::

    out = cam(x) * x * sam(x) + x

``mode="concat"`` instead concatenates ``[cam(x) * 1, x, sam(x), x]`` along
channels and projects back to ``C`` with a 1x1 convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ops
from .core.layers import Conv2d, Layer, LayerNorm, ReLU, Sequential, Sigmoid


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    reduction: int = 8
    mode: str = "broadcast"
    eca_kernel: int | str = "adaptive"

    def __post_init__(self):
        if self.mode not in ("broadcast", "concat"):
            raise ValueError(f"unknown attention mode {self.mode!r}")
        if self.channels < 1 or self.reduction < 1:
            raise ValueError("channels and reduction must be positive")
        if self.channels % self.reduction and self.channels >= self.reduction:
            raise ValueError(f"channels {self.channels} not divisible by reduction {self.reduction}")
        if self.eca_kernel != "adaptive" and (int(self.eca_kernel) < 1 or int(self.eca_kernel) % 2 == 0):
            raise ValueError("eca kernel must be odd")

    @property
    def hidden(self) -> int:
        return max(1, self.channels // self.reduction)


def eca_kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    """Adaptive 1-D kernel: nearest odd to ``log2(C)/gamma + b/gamma``, at least 3."""
    if channels < 16:
        return 3
    t = int(abs(math.log2(channels) / gamma + b / gamma))
    k = t if t % 2 else t + 1
    return max(k, 3)


def _branch(conv_in: Conv2d, conv_out: Conv2d, name: str) -> Sequential:
    return Sequential([conv_in, LayerNorm(name="ln"), ReLU(), conv_out], name=name)


class ChannelAttention(Layer):
    """concat(avg, max) -> 1x1 conv (2C -> 2C/r) -> LN -> ReLU -> 1x1 conv -> sigmoid."""

    def __init__(self, cfg: AttentionConfig, rng, name="cam"):
        super().__init__(name)
        c, hid = cfg.channels, 2 * cfg.hidden
        self.mlp = _branch(Conv2d(2 * c, hid, 1, rng, name="w0"), Conv2d(hid, c, 1, rng, name="w1"), "mlp")
        self.gate = Sigmoid()

    def children(self):
        return [self.mlp, self.gate]

    def forward(self, x):
        self._shape = x.shape
        mx, self._mp_cache = ops.global_max_pool_forward(x)
        desc = np.concatenate([ops.global_avg_pool(x), mx], axis=1)
        return self.gate.forward(self.mlp.forward(desc))

    def backward(self, dout):
        d = self.mlp.backward(self.gate.backward(dout))
        c = self._shape[1]
        return ops.global_avg_pool_backward(d[:, :c], self._shape) + ops.global_max_pool_backward(
            d[:, c:], self._mp_cache
        )


class SpatialAttention(Layer):
    """Two-scale spatial gate: sigmoid(branch1x1(x) * branch3x3(x))."""

    def __init__(self, cfg: AttentionConfig, rng, name="sam"):
        super().__init__(name)
        c, hid = cfg.channels, cfg.hidden
        self.b1 = _branch(Conv2d(c, hid, 1, rng, name="conv1x1"), Conv2d(hid, 1, 1, rng, name="out"), "branch1")
        self.b3 = _branch(Conv2d(c, hid, 3, rng, name="conv3x3"), Conv2d(hid, 1, 1, rng, name="out"), "branch3")
        self.gate = Sigmoid()

    def children(self):
        return [self.b1, self.b3, self.gate]

    def forward(self, x):
        self._f1 = self.b1.forward(x)
        self._f2 = self.b3.forward(x)
        return self.gate.forward(self._f1 * self._f2)

    def backward(self, dout):
        d = self.gate.backward(dout)
        return self.b1.backward(d * self._f2) + self.b3.backward(d * self._f1)


class DualAttention(Layer):
    def __init__(self, cfg: AttentionConfig, rng, name="dam"):
        super().__init__(name)
        self.mode = cfg.mode
        self.cam = ChannelAttention(cfg, rng)
        self.sam = SpatialAttention(cfg, rng)
        if self.mode == "concat":
            c = cfg.channels
            self.proj = Conv2d(3 * c + 1, c, 1, rng, name="proj")

    def children(self):
        kids = [self.cam, self.sam]
        return kids + [self.proj] if self.mode == "concat" else kids

    def forward(self, x):
        self._x = x
        a1 = self.cam.forward(x)
        a2 = self.sam.forward(x)
        self._a1, self._a2 = a1, a2
        if self.mode == "broadcast":
            return a1 * x * a2 + x
        stacked = np.concatenate([np.broadcast_to(a1, x.shape), x, a2, x], axis=1)
        return self.proj.forward(stacked)

    def backward(self, dout):
        x, a1, a2 = self._x, self._a1, self._a2
        if self.mode == "broadcast":
            da1 = (dout * x * a2).sum(axis=(2, 3), keepdims=True)
            da2 = (dout * x * a1).sum(axis=1, keepdims=True)
            dx = dout * a1 * a2 + dout
        else:
            c = x.shape[1]
            d = self.proj.backward(dout)
            da1 = d[:, :c].sum(axis=(2, 3), keepdims=True)
            da2 = d[:, 2 * c:2 * c + 1]
            dx = d[:, c:2 * c] + d[:, 2 * c + 1:]
        return dx + self.cam.backward(da1) + self.sam.backward(da2)

    @property
    def maps(self):
        """``(channel map, spatial map)`` from the last forward pass."""
        return self._a1, self._a2


class ECA(Layer):
    """GAP -> 1-D conv across channels (zero padded) -> sigmoid -> rescale."""

    def __init__(self, cfg: AttentionConfig, rng, name="eca"):
        super().__init__(name)
        k = eca_kernel_size(cfg.channels) if cfg.eca_kernel == "adaptive" else int(cfg.eca_kernel)
        self.k = k
        self.params["w"] = rng.uniform(-1.0, 1.0, size=k) / math.sqrt(k)
        self.params["b"] = np.zeros(1)

    def _conv1d(self, g):
        k, pad = self.k, self.k // 2
        gp = np.pad(g, ((0, 0), (pad, pad)))
        C = g.shape[1]
        return sum(self.params["w"][j] * gp[:, j:j + C] for j in range(k)) + self.params["b"][0]

    def forward(self, x):
        self._x = x
        self._g = x.mean(axis=(2, 3))
        self._y = ops.sigmoid(self._conv1d(self._g))
        return x * self._y[:, :, None, None]

    def backward(self, dout):
        x, g, y = self._x, self._g, self._y
        k, pad, C = self.k, self.k // 2, g.shape[1]
        dy = (dout * x).sum(axis=(2, 3))
        dz = dy * y * (1.0 - y)
        gp = np.pad(g, ((0, 0), (pad, pad)))
        self.grads["w"] = np.array([(dz * gp[:, j:j + C]).sum() for j in range(k)])
        self.grads["b"] = np.array([dz.sum()])
        dgp = np.zeros_like(gp)
        for j in range(k):
            dgp[:, j:j + C] += self.params["w"][j] * dz
        dg = dgp[:, pad:pad + C]
        H, W = x.shape[2:]
        return dout * y[:, :, None, None] + np.broadcast_to(dg[:, :, None, None] / (H * W), x.shape)


def shortcut_attention_embed(block_out, f_in, attention: Layer | None = None):
    """Add the attention branch computed on ``f_in`` to ``block_out``; no trailing ReLU."""
    if attention is None:
        return block_out
    branch = attention.forward(f_in)
    if branch.shape != block_out.shape:
        raise ops.DimensionError(f"attention branch {branch.shape} vs block output {block_out.shape}")
    return block_out + branch
