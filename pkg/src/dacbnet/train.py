"""Adam, the training loop, and the binary checkpoint format.

Checkpoint layout (little endian)::

    b"DACB" | u32 version | u32 count | count x tensor
    tensor = u32 name_len | name (utf-8) | u8 dtype | u32 ndim | u64 dims[ndim] | raw data

dtype codes: 0 float64, 1 float32, 2 int64, 3 uint8. Metadata (model config,
train config, epoch, step, rng state, history) travels as a uint8 tensor named
``__meta__`` holding JSON.
"""

from __future__ import annotations

import io
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import DACBNet, FreezePolicy, ModelConfig, apply_freeze, build_dacb
from .core.rng import derive_seed, make_rng, restore_rng, rng_state
from .data.ppm import atomic_write_bytes
from .losses import LossConfig, loss_from_logits, output_probs

log = logging.getLogger(__name__)

MAGIC = b"DACB"
VERSION = 1
HISTORY_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    freeze: FreezePolicy = field(default_factory=lambda: FreezePolicy(0.0))
    warmup_epochs: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        loss = d.pop("loss", {})
        loss = LossConfig(**{**loss, "alpha": tuple(loss["alpha"]) if loss.get("alpha") else None})
        freeze = FreezePolicy(**d.pop("freeze", {}))
        return cls(loss=loss, freeze=freeze, **d)


# -- Adam --------------------------------------------------------------------

def adam_update(p, g, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One Adam step with decoupled weight decay; returns ``(p, m, v)``."""
    b1, b2 = betas
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    p = p - lr * (m_hat / (np.sqrt(v_hat) + eps)) - lr * weight_decay * p
    return p, m, v


class Adam:
    """Adam over a layer tree; frozen layers are skipped entirely."""

    def __init__(self, model, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.model = model
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(layer.params[key]) for name, layer, key in model.named_parameters()}
        self.v = {name: np.zeros_like(a) for name, a in self.m.items()}

    def step(self):
        self.t += 1
        for name, layer, key in self.model.named_parameters():
            if layer.frozen:
                continue
            g = layer.grads.get(key)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
            layer.params[key], self.m[name], self.v[name] = adam_update(
                layer.params[key], g, self.m[name], self.v[name], self.t,
                self.lr, self.betas, self.eps, self.weight_decay,
            )

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state):
        self.t = int(state["t"])
        for name in self.m:
            self.m[name] = np.array(state["m"][name], dtype=np.float64)
            self.v[name] = np.array(state["v"][name], dtype=np.float64)


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: dict
    params: dict
    moments: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    rng_state: dict | None = None
    history: list = field(default_factory=list)
    train_config: dict | None = None
    extra: dict = field(default_factory=dict)

    def build_model(self) -> DACBNet:
        model = build_dacb(ModelConfig.from_dict(self.model_config))
        model.load_state_dict(self.params)
        return model


def _write_tensor(buf, name: str, arr: np.ndarray):
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.kind in "fi" else arr.dtype
    if np.dtype(dt) not in _CODES:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)) + raw)
    buf.write(struct.pack("<BI", _CODES[np.dtype(dt)], arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def encode_checkpoint(ckpt: Checkpoint, float32: bool = False) -> bytes:
    """Serialize; ``float32`` stores parameters at single precision (lossy)."""
    meta = {
        "model_config": ckpt.model_config, "step": ckpt.step, "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state, "history": ckpt.history,
        "train_config": ckpt.train_config, "extra": ckpt.extra,
    }
    tensors = [("__meta__", np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))]
    for name in sorted(ckpt.params):
        p = ckpt.params[name]
        tensors.append((f"param/{name}", p.astype(np.float32) if float32 else p))
    for name in sorted(ckpt.moments):
        tensors.append((f"moment/{name}", ckpt.moments[name]))
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not a DACB checkpoint")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        code, ndim = r.unpack("<BI")
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}Q")
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).copy()
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    if "__meta__" not in tensors:
        raise CheckpointError("checkpoint has no metadata")
    meta = json.loads(tensors.pop("__meta__").tobytes().decode())
    params = {k[6:]: v.astype(np.float64) for k, v in tensors.items() if k.startswith("param/")}
    moments = {k[7:]: v for k, v in tensors.items() if k.startswith("moment/")}
    return Checkpoint(meta["model_config"], params, moments, meta["step"], meta["epoch"],
                      meta["rng_state"], meta["history"], meta["train_config"], meta.get("extra", {}))


def save_checkpoint(path, ckpt: Checkpoint, float32: bool = False) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt, float32))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# -- training loop -----------------------------------------------------------

@dataclass
class TrainData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray | None = None
    y_val: np.ndarray | None = None


@dataclass
class TrainResult:
    model: DACBNet
    history: list
    best_epoch: int
    best_val_acc: float
    best_params: dict


def evaluate(model, x, y, loss_cfg: LossConfig, batch_size: int = 64):
    """Return ``(mean loss, accuracy, probabilities)`` without touching parameters."""
    losses, probs = [], []
    for i in range(0, len(x), batch_size):
        logits = model.forward(x[i:i + batch_size])
        p = output_probs(logits, loss_cfg)
        value, _, _ = loss_from_logits(logits, y[i:i + batch_size], loss_cfg)
        losses.append(value * len(p))
        probs.append(p)
    probs = np.concatenate(probs)
    return float(np.sum(losses) / len(x)), float(np.mean(probs.argmax(axis=1) == y)), probs


def history_text(history) -> str:
    lines = [HISTORY_HEADER]
    for row in history:
        lines.append(",".join([str(int(row[0]))] + [repr(float(v)) for v in row[1:]]))
    return "\n".join(lines) + "\n"


def _snapshot(model, opt, epoch, rng, history, cfg, extra=None) -> Checkpoint:
    moments = {f"m/{k}": v.copy() for k, v in opt.m.items()}
    moments.update({f"v/{k}": v.copy() for k, v in opt.v.items()})
    return Checkpoint(model.config.to_dict(), {k: v.copy() for k, v in model.state_dict().items()},
                      moments, opt.t, epoch, rng_state(rng), [list(r) for r in history], cfg.to_dict(),
                      dict(extra or {}))


def train_loop(model: DACBNet, data: TrainData, cfg: TrainConfig, out_dir=None,
               resume: Checkpoint | None = None, batch_hook=None, extra=None) -> TrainResult:
    """Mini-batch Adam training with per-epoch validation and best-model tracking.

    ``batch_hook(epoch, batch_index, loss)`` observes every training batch;
    ``extra`` is JSON metadata copied into every checkpoint.
    """
    opt = Adam(model, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    rng = make_rng(derive_seed(cfg.seed, "shuffle"))
    history, start = [], 0
    if resume is not None:
        model.load_state_dict(resume.params)
        opt.load_state({
            "t": resume.step,
            "m": {k[2:]: v for k, v in resume.moments.items() if k.startswith("m/")},
            "v": {k[2:]: v for k, v in resume.moments.items() if k.startswith("v/")},
        })
        rng = restore_rng(resume.rng_state)
        history, start = [tuple(r) for r in resume.history], resume.epoch
    has_val = data.x_val is not None and len(data.x_val)
    best = max(history, key=lambda r: r[4], default=None) if has_val else None
    best_params = {k: v.copy() for k, v in model.state_dict().items()}
    best_epoch, best_acc = (int(best[0]), best[4]) if best else (0, -1.0)
    last_good = _snapshot(model, opt, start, rng, history, cfg, extra)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    n = len(data.y_train)
    for epoch in range(start + 1, cfg.epochs + 1):
        apply_freeze(model, cfg.freeze if epoch > cfg.warmup_epochs else FreezePolicy(0.0))
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for b, i in enumerate(range(0, n, cfg.batch_size)):
            idx = order[i:i + cfg.batch_size]
            logits = model.forward(data.x_train[idx])
            value, probs, dlogits = loss_from_logits(logits, data.y_train[idx], cfg.loss)
            if not np.isfinite(value):
                if out_dir:
                    save_checkpoint(os.path.join(out_dir, "last_good.ckpt"), last_good)
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, batch {b}", last_good)
            model.backward(dlogits)
            opt.step()
            total += value * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == data.y_train[idx]))
            if batch_hook:
                batch_hook(epoch, b, value)
        if has_val:
            val_loss, val_acc, _ = evaluate(model, data.x_val, data.y_val, cfg.loss, cfg.batch_size)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        history.append((epoch, total / n, correct / n, val_loss, val_acc))
        log.info("epoch %d train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f", *history[-1])
        last_good = _snapshot(model, opt, epoch, rng, history, cfg, extra)
        if has_val and val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_params = {k: v.copy() for k, v in model.state_dict().items()}
            if out_dir:
                save_checkpoint(os.path.join(out_dir, "best.ckpt"), last_good)
        if out_dir:
            atomic_write_bytes(os.path.join(out_dir, "history.csv"), history_text(history).encode())
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(os.path.join(out_dir, "last.ckpt"), last_good)
    if out_dir:
        atomic_write_bytes(os.path.join(out_dir, "history.csv"), history_text(history).encode())
        save_checkpoint(os.path.join(out_dir, "last.ckpt"), last_good)
    if not has_val:
        best_params = {k: v.copy() for k, v in model.state_dict().items()}
        best_epoch = len(history)
    return TrainResult(model, history, best_epoch, best_acc, best_params)
