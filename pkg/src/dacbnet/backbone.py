"""Dual-stream feature extractors and the assembled DACB network.

The two stream kinds keep the architectural contrast of the original pair at
toy scale:

* ``residual``: strided stem, then 1x1/3x3/1x1 bottleneck blocks with skip
  connections.
* ``separable``: strided stem, then blocks of two depthwise-separable
  convolutions (ReLU first) around a residual connection, downsampling by max
  pooling.

With ``eca=True`` every block's shortcut passes through an ECA gate and the
block drops its trailing ReLU. Dual attention is inserted after the final
stage (``final-dam``), after every stage (``per-stage-dam``) or nowhere.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import ECA, AttentionConfig, DualAttention
from .bilinear import BilinearPooling, CompactBilinearPooling, SketchProjection
from .core import ops
from .core.layers import Conv2d, Identity, Layer, Linear, Pool2d, ReLU, Residual, Sequential, Tap
from .core.rng import derive_seed, make_rng

STREAM_KINDS = ("residual", "separable")
INSERTIONS = ("final-dam", "per-stage-dam", "none")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneSpec:
    kind: str = "residual"
    widths: tuple = (16, 32, 64)
    blocks: tuple = (1, 1, 1)
    in_channels: int = 3
    input_size: tuple = (32, 32)
    attention: str = "final-dam"
    eca: bool = True
    reduction: int = 8
    attention_mode: str = "broadcast"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        if self.kind not in STREAM_KINDS:
            raise ConfigError(f"unknown stream kind {self.kind!r}")
        if self.attention not in INSERTIONS:
            raise ConfigError(f"unknown attention insertion {self.attention!r}")
        if not self.widths or len(self.widths) != len(self.blocks):
            raise ConfigError("widths and blocks must be non-empty and of equal length")
        if min(self.widths) < 1 or min(self.blocks) < 0:
            raise ConfigError("widths must be positive and block counts non-negative")

    @property
    def out_channels(self) -> int:
        built = [w for w, n in zip(self.widths, self.blocks) if n > 0]
        return built[-1] if built else self.widths[0]

    @property
    def out_size(self) -> tuple:
        # stem and strided 3x3 convs round up; 2x2 max pooling rounds down
        size = [(s + 1) // 2 for s in self.input_size]
        for i, n in enumerate(self.blocks):
            if n > 0 and i > 0:
                size = [(s + 1) // 2 if self.kind == "residual" else s // 2 for s in size]
        return tuple(size)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SketchConfig:
    pooling: str = "compact"
    kind: str = "random-maclaurin"
    d: int = 1024

    def __post_init__(self):
        if self.pooling not in ("compact", "exact"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")


@dataclass(frozen=True)
class ModelConfig:
    stream_a: BackboneSpec = field(default_factory=lambda: BackboneSpec(kind="residual"))
    stream_b: BackboneSpec = field(default_factory=lambda: BackboneSpec(kind="separable"))
    sketch: SketchConfig = field(default_factory=SketchConfig)
    classes: int = 7
    seed: int = 0

    @property
    def homologous(self) -> bool:
        return self.stream_a.kind == self.stream_b.kind

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            stream_a=BackboneSpec(**d["stream_a"]),
            stream_b=BackboneSpec(**d["stream_b"]),
            sketch=SketchConfig(**d["sketch"]),
            classes=int(d["classes"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class FreezePolicy:
    fraction: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError("freeze fraction must lie in [0, 1]")


class SepConv(Sequential):
    """Depthwise 3x3 followed by pointwise 1x1."""

    def __init__(self, c_in, c_out, rng, name="sepconv"):
        super().__init__(
            [Conv2d(c_in, c_in, 3, rng, groups=c_in, bias=False, name="depthwise"),
             Conv2d(c_in, c_out, 1, rng, name="pointwise")],
            name=name,
        )


def _shortcut(c_in, c_out, stride, spec, rng, name="shortcut"):
    proj = None
    if c_in != c_out or stride != 1:
        proj = Conv2d(c_in, c_out, 1, rng, stride=stride, pad=0, name="proj")
    if not spec.eca:
        return proj
    eca = ECA(AttentionConfig(c_out, spec.reduction), rng)
    return Sequential([proj, eca] if proj else [eca], name=name)


def _residual_block(c_in, c_out, stride, spec, rng, name):
    mid = max(c_out // 2, 4)
    body = Sequential(
        [Conv2d(c_in, mid, 1, rng, name="reduce"), ReLU(),
         Conv2d(mid, mid, 3, rng, stride=stride, name="conv3x3"), ReLU(),
         Conv2d(mid, c_out, 1, rng, name="expand")],
        name="body",
    )
    return Residual(body, _shortcut(c_in, c_out, stride, spec, rng), post_relu=not spec.eca, name=name)


def _separable_block(c_in, c_out, down, spec, rng, name):
    layers = [ReLU(), SepConv(c_in, c_out, rng, name="sep1"), ReLU(), SepConv(c_out, c_out, rng, name="sep2")]
    if down:
        layers.append(Pool2d("max", 2, 2))
    body = Sequential(layers, name="body")
    return Residual(body, _shortcut(c_in, c_out, 2 if down else 1, spec, rng), post_relu=False, name=name)


class Stream(Sequential):
    """One feature extractor; ``backbone_layers`` lists its freezable layers in order."""

    def __init__(self, spec: BackboneSpec, rng, name="stream"):
        layers = [Conv2d(spec.in_channels, spec.widths[0], 3, rng, stride=2, name="stem"), ReLU()]
        c = spec.widths[0]
        for s, (width, n) in enumerate(zip(spec.widths, spec.blocks)):
            if n == 0:
                continue
            stage = []
            for j in range(n):
                down = s > 0 and j == 0
                make = _residual_block if spec.kind == "residual" else _separable_block
                arg = (2 if down else 1) if spec.kind == "residual" else down
                stage.append(make(c, width, arg, spec, rng, name=f"block{j}"))
                c = width
            layers.append(Sequential(stage, name=f"stage{s}"))
            layers.append(Tap(f"stage{s}_out"))
            if spec.attention == "per-stage-dam":
                layers.append(DualAttention(AttentionConfig(c, spec.reduction, spec.attention_mode), rng, name=f"dam{s}"))
        if spec.attention == "final-dam":
            layers.append(DualAttention(AttentionConfig(c, spec.reduction, spec.attention_mode), rng))
        layers.append(Tap("dam_out"))
        super().__init__(layers, name=name)
        self.spec = spec
        attention_ids = {id(m) for _, a in self.named_layers()
                         if isinstance(a, (DualAttention, ECA)) for _, m in a.named_layers()}
        self.backbone_layers = [
            layer for _, layer in self.named_layers()
            if isinstance(layer, Conv2d) and id(layer) not in attention_ids
        ]


def build_stream(spec: BackboneSpec, rng, name="stream") -> Stream:
    return Stream(spec, rng, name=name)


class DACBNet(Layer):
    """Two streams -> (attention-refined maps) -> bilinear pooling -> FC logits."""

    def __init__(self, config: ModelConfig):
        super().__init__("dacb")
        self.config = config
        a, b = config.stream_a, config.stream_b
        if a.out_size != b.out_size:
            raise ConfigError(f"stream output sizes differ: {a.out_size} vs {b.out_size}")
        if a.input_size != b.input_size or a.in_channels != b.in_channels:
            raise ConfigError("streams must read the same input")
        self.stream_a = build_stream(a, make_rng(derive_seed(config.seed, "stream_a")), name="stream_a")
        self.stream_b = build_stream(b, make_rng(derive_seed(config.seed, "stream_b")), name="stream_b")
        na, nb = a.out_channels, b.out_channels
        sk = config.sketch
        if sk.pooling == "exact":
            self.pool = BilinearPooling()
            dim = na * nb
        else:
            proj = SketchProjection(sk.kind, na, nb, sk.d, derive_seed(config.seed, "sketch"))
            self.pool = CompactBilinearPooling(proj)
            dim = sk.d
        self.fc = Linear(dim, config.classes, make_rng(derive_seed(config.seed, "fc")))

    def children(self):
        return [self.stream_a, self.stream_b, self.pool, self.fc]

    def forward(self, x):
        fa = self.stream_a.forward(x)
        fb = self.stream_b.forward(x)
        return self.fc.forward(self.pool.forward(fa, fb))

    def backward(self, dlogits):
        dfa, dfb = self.pool.backward(self.fc.backward(dlogits))
        return self.stream_a.backward(dfa) + self.stream_b.backward(dfb)

    def predict_proba(self, x, batch_size: int = 64, activation: str = "softmax"):
        outs = []
        for i in range(0, len(x), batch_size):
            logits = self.forward(x[i:i + batch_size])
            outs.append(ops.softmax(logits) if activation == "softmax" else ops.sigmoid(logits))
        return np.concatenate(outs) if outs else np.zeros((0, self.config.classes))

    @property
    def streams(self):
        return [self.stream_a, self.stream_b]


def build_dacb(config: ModelConfig) -> DACBNet:
    return DACBNet(config)


def apply_freeze(model, policy: FreezePolicy):
    """Freeze the first ``floor(fraction * L)`` backbone layers of every stream.

    The classifier head and attention modules are never frozen.
    """
    streams = model.streams if isinstance(model, DACBNet) else [model]
    for _, layer in model.named_layers():
        layer.frozen = False
    for stream in streams:
        layers = stream.backbone_layers
        n = int(np.floor(policy.fraction * len(layers) + 1e-9))
        for layer in layers[:n]:
            layer.frozen = True
    return model


def frozen_count(stream: Stream) -> int:
    return sum(layer.frozen for layer in stream.backbone_layers)
