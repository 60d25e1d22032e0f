"""Layer objects with explicit forward/backward rules.

A :class:`Layer` caches what it needs during ``forward`` and consumes the cache
in ``backward``, which returns the input gradient and stores parameter
gradients in ``self.grads``. Composite layers (``Sequential``, ``Residual``)
build the model graph; the graph is a tree of layers, not a general tape.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base differentiable operation."""

    def __init__(self, name: str = ""):
        self.name = name or type(self).__name__.lower()
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.frozen = False

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    __call__ = forward

    def children(self) -> list["Layer"]:
        return []

    def named_layers(self, prefix: str = "") -> Iterator[tuple[str, "Layer"]]:
        path = f"{prefix}.{self.name}" if prefix else self.name
        yield path, self
        for child in self.children():
            yield from child.named_layers(path)

    def named_parameters(self) -> Iterator[tuple[str, "Layer", str]]:
        for path, layer in self.named_layers():
            for key in layer.params:
                yield f"{path}.{key}", layer, key

    def param_layers(self) -> list["Layer"]:
        """Layers owning parameters, in forward order."""
        return [layer for _, layer in self.named_layers() if layer.params]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: layer.params[key] for name, layer, key in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {name: (layer, key) for name, layer, key in self.named_parameters()}
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, (layer, key) in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != layer.params[key].shape:
                raise ValueError(f"{name}: shape {value.shape} != {layer.params[key].shape}")
            layer.params[key] = value.copy()

    def find(self, path: str) -> "Layer":
        for p, layer in self.named_layers():
            if p == path or p.endswith("." + path):
                return layer
        raise KeyError(path)


class Identity(Layer):
    def forward(self, x):
        return x

    def backward(self, dout):
        return dout


class Tap(Identity):
    """Identity that records the activation and its gradient (Grad-CAM hook)."""

    def forward(self, x):
        self.activation = x
        return x

    def backward(self, dout):
        self.gradient = dout
        return dout


class Conv2d(Layer):
    def __init__(self, c_in, c_out, k, rng, stride=1, pad=None, groups=1, bias=True, name="conv"):
        super().__init__(name)
        self.stride, self.groups = stride, groups
        self.pad = (k - 1) // 2 if pad is None else pad
        fan_in = (c_in // groups) * k * k
        self.params["w"] = kaiming_uniform(rng, (c_out, c_in // groups, k, k), fan_in)
        if bias:
            self.params["b"] = np.zeros(c_out)

    def forward(self, x):
        out, self._cache = ops.conv2d_forward(
            x, self.params["w"], self.params.get("b"), self.stride, self.pad, self.groups
        )
        return out

    def backward(self, dout):
        dx, dw, db = ops.conv2d_backward(dout, self._cache)
        self.grads["w"] = dw
        if "b" in self.params:
            self.grads["b"] = db
        return dx


class Linear(Layer):
    def __init__(self, n_in, n_out, rng, name="fc"):
        super().__init__(name)
        self.params["w"] = kaiming_uniform(rng, (n_in, n_out), n_in)
        self.params["b"] = np.zeros(n_out)

    def forward(self, x):
        self._x = x
        return ops.matmul(x, self.params["w"]) + self.params["b"]

    def backward(self, dout):
        dx, dw = ops.matmul_backward(dout, self._x, self.params["w"])
        self.grads["w"] = dw
        self.grads["b"] = dout.sum(axis=0)
        return dx


class LayerNorm(Layer):
    """Per-sample normalization over channel and spatial axes."""

    def __init__(self, shape=None, affine=False, name="ln"):
        super().__init__(name)
        if affine:
            self.params["gamma"] = np.ones(shape)
            self.params["beta"] = np.zeros(shape)

    def forward(self, x):
        out, self._cache = ops.layer_norm_forward(x, self.params.get("gamma"), self.params.get("beta"))
        return out

    def backward(self, dout):
        dx, dg, db = ops.layer_norm_backward(dout, self._cache)
        if self.params:
            self.grads["gamma"], self.grads["beta"] = dg, db
        return dx


class ReLU(Layer):
    def forward(self, x):
        self._x = x
        return ops.relu(x)

    def backward(self, dout):
        return ops.relu_backward(dout, self._x)


class Sigmoid(Layer):
    def forward(self, x):
        self._y = ops.sigmoid(x)
        return self._y

    def backward(self, dout):
        return ops.sigmoid_backward(dout, self._y)


class Pool2d(Layer):
    def __init__(self, kind, k, stride=None, name=None):
        super().__init__(name or f"{kind}pool")
        self.kind, self.k, self.stride = kind, k, stride or k

    def forward(self, x):
        out, self._cache = ops.pool2d_forward(x, self.kind, self.k, self.stride)
        return out

    def backward(self, dout):
        return ops.pool2d_backward(dout, self._cache)


class GlobalAvgPool(Layer):
    def forward(self, x):
        self._shape = x.shape
        return ops.global_avg_pool(x)

    def backward(self, dout):
        return ops.global_avg_pool_backward(dout, self._shape)


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, layers, name="seq"):
        super().__init__(name)
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class Residual(Layer):
    """``post(body(x) + shortcut(x))``; ``post`` is ReLU or nothing."""

    def __init__(self, body, shortcut=None, post_relu=True, name="block"):
        super().__init__(name)
        self.body = body
        self.shortcut = shortcut or Identity("identity")
        self.post = ReLU("relu") if post_relu else None

    def children(self):
        kids = [self.body, self.shortcut]
        return kids + [self.post] if self.post else kids

    def forward(self, x):
        out = self.body.forward(x) + self.shortcut.forward(x)
        return self.post.forward(out) if self.post else out

    def backward(self, dout):
        if self.post:
            dout = self.post.backward(dout)
        return self.body.backward(dout) + self.shortcut.backward(dout)
