"""Self-verification: gradient checks, oracle equivalence and statistical properties.

Each suite returns a list of :class:`Check` results. ``run_all`` runs every
suite and is what ``dacb verify`` executes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from .attention import ECA, AttentionConfig, ChannelAttention, DualAttention, SpatialAttention
from .backbone import BackboneSpec, ModelConfig, SketchConfig, build_dacb
from .bilinear import (
    BilinearPooling,
    CompactBilinearPooling,
    SketchProjection,
    bilinear_pool,
    bilinear_pool_backward,
    compact_project,
    compact_project_backward,
    compact_project_forward,
    l2_normalize,
    l2_normalize_backward,
    signed_sqrt,
    signed_sqrt_backward,
)
from .core import ops
from .core.gradcheck import GradCheckConfig, check_scalar, grad_check
from .core.layers import Conv2d, Layer, LayerNorm, Pool2d, ReLU, Sigmoid
from .core.rng import make_rng
from .losses import (
    LossConfig,
    bce,
    cce_total,
    complement_entropy,
    cross_entropy,
    focal_loss,
    loss_from_logits,
    one_hot,
)
from .metrics import auc_binary, confusion, prf1

GRAD_RTOL = 1e-4
MODEL_RTOL = 1e-3


@dataclass
class Check:
    name: str
    passed: bool
    value: float = 0.0
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> int:
        return sum(c.passed for c in self.checks)

    @property
    def ok(self) -> bool:
        return self.passed == len(self.checks)


class _Fn(Layer):
    """Wrap a functional forward/backward pair as a layer for ``grad_check``."""

    def __init__(self, fwd, bwd, name="fn"):
        super().__init__(name)
        self._fwd, self._bwd = fwd, bwd

    def forward(self, *xs):
        self._xs = xs
        out, self._cache = self._fwd(*xs)
        return out

    def backward(self, dout):
        return self._bwd(dout, self._cache, *self._xs)


class _Logits(Layer):
    """Full model as a single-input node producing logits."""

    def __init__(self, model):
        super().__init__("model")
        self.model = model

    def children(self):
        return [self.model]

    def forward(self, x):
        return self.model.forward(x)

    def backward(self, dout):
        return self.model.backward(dout)


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _probs(rng, n, P):
    z = rng.standard_normal((n, P))
    return ops.softmax(z)


def gradient_cases(seed: int = 0):
    """``(name, node, inputs, rtol)`` for every differentiable operation."""
    rng = make_rng(seed)
    x = rng.standard_normal((2, 16, 6, 6))
    cases = [
        ("conv3x3", Conv2d(3, 4, 3, rng), rng.standard_normal((2, 3, 6, 6))),
        ("conv3x3_stride2", Conv2d(3, 4, 3, rng, stride=2), rng.standard_normal((2, 3, 7, 7))),
        ("conv1x1", Conv2d(4, 5, 1, rng), rng.standard_normal((2, 4, 5, 5))),
        ("conv_depthwise", Conv2d(4, 4, 3, rng, groups=4, bias=False), rng.standard_normal((2, 4, 5, 5))),
        ("maxpool", Pool2d("max", 2), rng.standard_normal((2, 3, 6, 6))),
        ("avgpool", Pool2d("avg", 2), rng.standard_normal((2, 3, 6, 6))),
        ("global_avg_pool", _Fn(lambda a: (ops.global_avg_pool(a), a.shape),
                                lambda d, s, a: ops.global_avg_pool_backward(d, s)),
         rng.standard_normal((2, 3, 4, 4))),
        ("global_max_pool", _Fn(ops.global_max_pool_forward, lambda d, c, a: ops.global_max_pool_backward(d, c)),
         rng.standard_normal((2, 3, 4, 4))),
        ("layer_norm", LayerNorm((3, 4, 4), affine=True), rng.standard_normal((2, 3, 4, 4))),
        ("relu", ReLU(), _away_from_zero(rng, (2, 3, 4, 4))),
        ("sigmoid", Sigmoid(), rng.standard_normal((2, 3, 4, 4))),
        ("softmax", _Fn(lambda a: (ops.softmax(a),) * 2, lambda d, y, a: ops.softmax_backward(d, y)),
         rng.standard_normal((3, 5))),
        ("cam", ChannelAttention(AttentionConfig(16), rng), x),
        ("sam", SpatialAttention(AttentionConfig(16), rng), x),
        ("dam", DualAttention(AttentionConfig(16), rng), x),
        ("dam_concat", DualAttention(AttentionConfig(16, mode="concat"), rng), x),
        ("eca", ECA(AttentionConfig(16), rng), x),
        ("bilinear_pool", _Fn(lambda a, b: (bilinear_pool(a, b), None),
                              lambda d, c, a, b: bilinear_pool_backward(d, a, b)),
         (rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 4, 4, 4)))),
        ("signed_sqrt", _Fn(lambda a: (signed_sqrt(a), None), lambda d, c, a: signed_sqrt_backward(d, a)),
         _away_from_zero(rng, (3, 10))),
        ("l2_normalize", _Fn(lambda a: (l2_normalize(a), None), lambda d, c, a: l2_normalize_backward(d, a)),
         rng.standard_normal((3, 10))),
        ("bilinear_layer", BilinearPooling(),
         (rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 4, 4, 4)))),
    ]
    for kind in ("random-maclaurin", "tensor-sketch"):
        # 8 x 8 hashed pairs fill all 16 buckets here; an empty bucket holds FFT
        # round-off that the signed square root turns into finite-difference noise
        p = SketchProjection(kind, 8, 8, 16, seed=seed + 1)
        cases.append((f"compact_project_{kind}",
                      _Fn(lambda a, b, p=p: compact_project_forward(p, a, b),
                          lambda d, c, a, b, p=p: compact_project_backward(p, d, c)),
                      (rng.standard_normal((2, 8, 3, 3)), rng.standard_normal((2, 8, 3, 3)))))
        cases.append((f"cbp_layer_{kind}", CompactBilinearPooling(p),
                      (rng.standard_normal((2, 8, 3, 3)), rng.standard_normal((2, 8, 3, 3)))))
    return [(n, node, inp, GRAD_RTOL) for n, node, inp in cases]


def tiny_model_config(seed: int = 0, classes: int = 3) -> ModelConfig:
    spec = dict(widths=(8, 8, 16), blocks=(1, 1, 1), input_size=(16, 16))
    return ModelConfig(BackboneSpec(kind="residual", **spec), BackboneSpec(kind="separable", **spec),
                       SketchConfig(d=64), classes=classes, seed=seed)


def gradient_suite(seed: int = 0, cfg: GradCheckConfig = GradCheckConfig()) -> list:
    checks = []
    for name, node, inputs, rtol in gradient_cases(seed):
        r = grad_check(node, inputs, GradCheckConfig(cfg.h, rtol, cfg.probes, cfg.floor), seed)
        checks.append(Check(name, r.passed, r.max_rel_err, str(r)))

    rng = make_rng(seed + 7)
    labels = np.array([0, 2, 1, 2])
    probs = _probs(rng, 4, 3)
    loss_fns = {
        "cross_entropy": lambda p: cross_entropy(p, labels),
        "complement_entropy": lambda p: complement_entropy(p, labels),
        "cce": lambda p: cce_total(p, labels, LossConfig("cce", 3)),
        "focal": lambda p: focal_loss(p, labels, LossConfig("focal", 3, alpha=(0.5, 1.0, 2.0))),
        "bce": lambda p: bce(p, one_hot(labels, 3)),
    }
    for name, fn in loss_fns.items():
        r = check_scalar(lambda p, fn=fn: fn(p)[0], lambda p, fn=fn: fn(p)[1], probs,
                         GradCheckConfig(cfg.h, GRAD_RTOL, cfg.probes, cfg.floor), seed)
        checks.append(Check(f"loss_{name}", r.passed, r.max_rel_err, str(r)))
    logits = rng.standard_normal((4, 3))
    for kind in ("ce", "bce", "focal", "cce"):
        lc = LossConfig(kind, 3)
        r = check_scalar(lambda z, lc=lc: loss_from_logits(z, labels, lc)[0],
                         lambda z, lc=lc: loss_from_logits(z, labels, lc)[2], logits,
                         GradCheckConfig(cfg.h, GRAD_RTOL, cfg.probes, cfg.floor), seed)
        checks.append(Check(f"logits_{kind}", r.passed, r.max_rel_err, str(r)))

    model = build_dacb(tiny_model_config(seed))
    jitter = make_rng(seed + 11)
    # zero-initialized biases put ReLUs exactly on their kink wherever an input
    # patch is all zero; finite differences are only meaningful at generic points
    for _, layer, key in model.named_parameters():
        if key == "b":
            layer.params[key] += jitter.normal(0.0, 0.05, size=layer.params[key].shape)
    x = jitter.uniform(0, 1, size=(2, 3, 16, 16))
    r = grad_check(_Logits(model), x, GradCheckConfig(cfg.h, MODEL_RTOL, 6, cfg.floor), seed)
    checks.append(Check("full_model", r.passed, r.max_rel_err, str(r)))
    return checks


def bilinear_suite(instances: int = 200, seed: int = 0, tol: float = 1e-12) -> list:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        na, nb = rng.integers(1, 9, size=2)
        h = int(rng.integers(1, 5))
        w = int(rng.integers(1, 16 // h + 1))
        B = int(rng.integers(1, 3))
        fa = rng.standard_normal((B, na, h, w))
        fb = rng.standard_normal((B, nb, h, w))
        got, want = bilinear_pool(fa, fb), oracles.bilinear_pool(fa, fb)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return [Check("bilinear_vs_outer_products", worst <= tol, worst, f"{instances} instances")]


def sketch_stats(kind: str, d: int, trials: int = 500, dim: int = 16, seed: int = 0):
    """Mean estimate ratio and mean relative error of ``<phi(x), phi(y)>`` vs ``<x, y>^2``."""
    rng = make_rng(seed)
    x = rng.standard_normal(dim)
    y = 0.5 * x + rng.standard_normal(dim)
    truth = float(x @ y) ** 2
    fx, fy = x.reshape(1, dim, 1, 1), y.reshape(1, dim, 1, 1)
    est = np.empty(trials)
    for t in range(trials):
        p = SketchProjection(kind, dim, dim, d, seed=1000 + t, check_compression=False)
        est[t] = float(np.sum(compact_project(p, fx) * compact_project(p, fy)))
    return float(est.mean() / truth), float(np.mean(np.abs(est - truth)) / truth)


def sketch_suite(trials: int = 500, dims=(64, 256, 1024), seed: int = 0) -> list:
    checks = []
    for kind in ("random-maclaurin", "tensor-sketch"):
        errs = []
        for d in dims:
            ratio, err = sketch_stats(kind, d, trials, seed=seed)
            errs.append(err)
            checks.append(Check(f"{kind}_unbiased_d{d}", abs(ratio - 1) <= 0.05, ratio - 1,
                                    f"mean/true = {ratio:.4f}"))
        mono = all(a > b for a, b in zip(errs, errs[1:]))
        checks.append(Check(f"{kind}_error_decreasing", mono, errs[-1],
                            " > ".join(f"{e:.4f}" for e in errs)))
    return checks


def loss_suite(perturbations: int = 100, seed: int = 0) -> list:
    checks = []
    sym = np.array([[0.5, 0.25, 0.25]])
    v, _ = complement_entropy(sym, np.array([0]))
    checks.append(Check("complement_entropy_ln2", abs(v - math.log(2)) <= 1e-10, abs(v - math.log(2))))

    rng = make_rng(seed)
    P, g = 5, 1
    base = np.full((1, P), 0.6 / (P - 1))
    base[0, g] = 0.4
    top, _ = complement_entropy(base, np.array([g]))
    beaten = 0
    for _ in range(perturbations):
        wrong = rng.dirichlet(np.ones(P - 1)) * 0.6
        p = np.insert(wrong, g, 0.4)[None]
        beaten += complement_entropy(p, np.array([g]))[0] > top
    checks.append(Check("complement_entropy_uniform_max", beaten == 0, float(beaten),
                        f"{perturbations} perturbations"))

    probs = _probs(rng, 16, 4)
    labels = rng.integers(0, 4, size=16)
    ce, gce = cross_entropy(probs, labels)
    c0, g0 = cce_total(probs, labels, LossConfig("cce", 4, beta=0.0))
    checks.append(Check("cce_beta0_is_ce", c0 == ce and np.array_equal(g0, gce), abs(c0 - ce)))
    fl, _ = focal_loss(probs, labels, LossConfig("focal", 4, gamma=0.0, alpha=(1.0,) * 4))
    checks.append(Check("focal_gamma0_is_ce", abs(fl - ce) <= 1e-12, abs(fl - ce)))
    checks.append(Check("ce_vs_loop", abs(ce - oracles.cross_entropy(probs, labels)) <= 1e-12,
                        abs(ce - oracles.cross_entropy(probs, labels))))
    ent = complement_entropy(probs, labels)[0]
    checks.append(Check("complement_entropy_vs_loop",
                        abs(ent - oracles.complement_entropy(probs, labels)) <= 1e-12,
                        abs(ent - oracles.complement_entropy(probs, labels))))
    return checks


def _random_instance(rng):
    n = int(rng.integers(2, 60))
    P = int(rng.integers(2, 6))
    y = rng.integers(0, P, size=n)
    scores = rng.random((n, P))
    if rng.random() < 0.5:
        scores = np.round(scores, 1)  # force ties
    return y, scores, P


def metric_suite(instances: int = 1000, seed: int = 0, tol: float = 1e-10) -> list:
    rng = make_rng(seed)
    prf_err = auc_err = 0.0
    micro_ok = True
    for _ in range(instances):
        y, scores, P = _random_instance(rng)
        pred = scores.argmax(axis=1)
        cm = confusion(y, pred, P)
        if not np.array_equal(cm.counts, oracles.confusion(y, pred, P)):
            prf_err = math.inf
        s = prf1(cm)
        for c in range(P):
            tp, fp, fn, _ = oracles.per_class_counts(y, pred, c)
            want = oracles.precision_recall_f1(tp, fp, fn)
            got = s.per_class[c]
            prf_err = max(prf_err, *(abs(a - b) for a, b in zip((got.precision, got.recall, got.f1), want)))
            pos = y == c
            if pos.any() and not pos.all():
                auc_err = max(auc_err, abs(auc_binary(scores[:, c], pos) - oracles.mann_whitney_auc(scores[:, c], pos)))
        micro_ok &= s.micro.precision == s.micro.recall == s.accuracy
    return [
        Check("prf1_vs_counting", prf_err <= tol, prf_err, f"{instances} instances"),
        Check("auc_vs_mann_whitney", auc_err <= tol, auc_err, f"{instances} instances"),
        Check("micro_p_eq_micro_r_eq_acc", bool(micro_ok), 0.0),
    ]


SUITES = {
    "gradients": gradient_suite,
    "bilinear": bilinear_suite,
    "sketch": sketch_suite,
    "losses": loss_suite,
    "metrics": metric_suite,
}


def run_all(names=None) -> list:
    results = []
    for name in names or SUITES:
        start = time.perf_counter()
        checks = SUITES[name]()
        results.append(SuiteResult(name, checks, time.perf_counter() - start))
    return results
