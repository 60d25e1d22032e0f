"""Central finite-difference checks for layers and scalar functions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng


@dataclass(frozen=True)
class GradCheckConfig:
    h: float = 1e-5
    rtol: float = 1e-4
    probes: int = 20
    # denominator floor so gradients that are ~0 compare on an absolute scale
    floor: float = 1e-6

    def __post_init__(self):
        if self.h <= 0 or self.rtol <= 0:
            raise ValueError("h and rtol must be positive")


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked: int
    worst: str = ""
    errors: dict = field(default_factory=dict)

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_err:.3e} over {self.checked} probes (worst: {self.worst})"


def rel_err(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def _probe(f, arr, idx, h):
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def _coords(rng, shape, n):
    size = int(np.prod(shape))
    picks = rng.choice(size, size=min(n, size), replace=False)
    return [np.unravel_index(int(p), shape) for p in picks]


def grad_check(node, x, cfg: GradCheckConfig = GradCheckConfig(), seed: int = 0) -> GradCheckReport:
    """Check ``node``'s backward against finite differences.

    ``x`` is an array or a tuple of arrays (multi-input nodes). The probe loss
    is ``sum(r * node.forward(*x))`` for a fixed random ``r``.
    """
    rng = make_rng(seed)
    xs = [np.array(a, dtype=np.float64) for a in (x if isinstance(x, tuple) else (x,))]
    out = node.forward(*xs)
    if not np.all(np.isfinite(out)):
        return GradCheckReport(np.inf, False, 0, "non-finite forward output")
    r = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(r * node.forward(*xs)))

    loss()
    dxs = node.backward(r)
    dxs = dxs if isinstance(dxs, tuple) else (dxs,)
    targets = [(f"input{i}", xs[i], dxs[i]) for i in range(len(xs)) if dxs[i] is not None]
    for pname, layer, key in node.named_parameters():
        if key in layer.grads:
            targets.append((pname, layer.params[key], layer.grads[key].copy()))
    dxs = [d.copy() for d in dxs if d is not None]

    worst, worst_name, count, errors = 0.0, "", 0, {}
    for name, arr, grad in targets:
        for idx in _coords(rng, arr.shape, cfg.probes):
            num = _probe(loss, arr, idx, cfg.h)
            e = rel_err(float(grad[idx]), num, cfg.floor)
            if not np.isfinite(num) or not np.isfinite(e):
                return GradCheckReport(np.inf, False, count, f"{name}{idx} non-finite")
            errors[f"{name}{list(idx)}"] = e
            count += 1
            if e > worst:
                worst, worst_name = e, f"{name}{list(idx)}"
    return GradCheckReport(worst, worst <= cfg.rtol, count, worst_name, errors)


def check_scalar(fn, grad, x, cfg: GradCheckConfig = GradCheckConfig(), seed: int = 0) -> GradCheckReport:
    """Check ``grad(x)`` against finite differences of the scalar ``fn(x)``."""
    rng = make_rng(seed)
    x = np.array(x, dtype=np.float64)
    g = np.asarray(grad(x), dtype=np.float64).copy()
    worst, worst_name, count = 0.0, "", 0
    for idx in _coords(rng, x.shape, cfg.probes):
        num = _probe(lambda: float(fn(x)), x, idx, cfg.h)
        e = rel_err(float(g[idx]), num, cfg.floor)
        if not np.isfinite(e):
            return GradCheckReport(np.inf, False, count, f"x{list(idx)} non-finite")
        count += 1
        if e > worst:
            worst, worst_name = e, f"x{list(idx)}"
    return GradCheckReport(worst, worst <= cfg.rtol, count, worst_name)
