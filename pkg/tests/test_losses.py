import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dacbnet import oracles
from dacbnet.core import ops
from dacbnet.core.gradcheck import check_scalar
from dacbnet.core.rng import make_rng
from dacbnet.losses import (
    InputError,
    LossConfig,
    bce,
    cce_total,
    check_prediction,
    complement_entropy,
    cross_entropy,
    focal_loss,
    loss_from_logits,
    one_hot,
)

LN2 = np.log(2.0)
SYM = np.array([[0.5, 0.25, 0.25]])


def _batch(seed, n=6, P=4):
    r = make_rng(seed)
    return ops.softmax(r.standard_normal((n, P)) * 2), r.integers(0, P, n)


# -- cross entropy -----------------------------------------------------------

def test_ce_examples():
    assert abs(cross_entropy(np.eye(3), [0, 1, 2])[0]) < 1e-11
    assert abs(cross_entropy(SYM, [0])[0] - LN2) < 1e-11


@given(st.integers(0, 10_000))
def test_ce_matches_loop(seed):
    p, y = _batch(seed)
    assert abs(cross_entropy(p, y)[0] - oracles.cross_entropy(p, y)) < 1e-12


def test_label_out_of_range():
    with pytest.raises(InputError):
        cross_entropy(SYM, [3])
    with pytest.raises(InputError):
        complement_entropy(SYM, [-1])
    with pytest.raises(InputError):
        check_prediction(np.array([[0.6, 0.6]]), [0])


# -- complement entropy ------------------------------------------------------

def test_complement_examples():
    assert abs(complement_entropy(SYM, [0])[0] - LN2) < 1e-10
    assert complement_entropy(np.eye(4), [0, 1, 2, 3])[0] == 0.0
    # all wrong-class mass on one class; the eps guard leaves ~1e-12
    assert abs(complement_entropy(np.array([[0.3, 0.7, 0.0]]), [0])[0]) < 1e-11


@given(st.integers(0, 10_000))
def test_complement_matches_double_loop(seed):
    p, y = _batch(seed, P=5)
    assert abs(complement_entropy(p, y)[0] - oracles.complement_entropy(p, y)) < 1e-10


@given(st.integers(3, 8), st.floats(0.01, 0.95), st.integers(0, 10_000))
def test_uniform_wrong_class_is_maximal(P, pg, seed):
    uniform = np.full((1, P), (1 - pg) / (P - 1))
    uniform[0, 0] = pg
    top = complement_entropy(uniform, [0])[0]
    assert abs(top - np.log(P - 1)) < 1e-9
    r = make_rng(seed)
    for _ in range(100):
        p = np.empty((1, P))
        p[0, 0] = pg
        p[0, 1:] = r.dirichlet(np.ones(P - 1)) * (1 - pg)
        h = complement_entropy(p, [0])[0]
        assert -1e-15 <= h <= top + 1e-12


# -- complement cross entropy ------------------------------------------------

def test_cce_example():
    value, _ = cce_total(SYM, [0], LossConfig("cce", 3))
    assert abs(value - 0.346574) < 1e-6
    assert abs(value - LN2 / 2) < 1e-10


def test_cce_beta_zero_is_bit_identical_to_ce():
    p, y = _batch(3)
    v, g = cce_total(p, y, LossConfig("cce", 4, beta=0.0))
    v0, g0 = cross_entropy(p, y)
    assert v == v0 and np.array_equal(g, g0)


def test_cce_needs_two_classes():
    with pytest.raises(ValueError):
        LossConfig("cce", 1)
    with pytest.raises(ValueError):
        cce_total(np.ones((2, 1)), [0, 0], LossConfig("cce", 2))


# -- focal and BCE -----------------------------------------------------------

def test_focal_examples():
    assert abs(focal_loss(SYM, [0], LossConfig("focal", 3))[0] - 0.173287) < 1e-6
    p, y = _batch(4)
    assert abs(focal_loss(p, y, LossConfig("focal", 4, gamma=0.0))[0] - cross_entropy(p, y)[0]) < 1e-12


def test_bce_examples():
    t = one_hot(np.array([0, 2, 1]), 3)
    assert bce(t, t)[0] < 1e-11
    assert abs(bce(np.full((3, 3), 0.5), t)[0] - LN2) < 1e-11
    with pytest.raises(InputError):
        bce(np.full((1, 2), 0.5), np.array([[0.5, 1.0]]))


@given(st.integers(0, 10_000))
def test_bce_matches_loop(seed):
    r = make_rng(seed)
    s = r.uniform(0.01, 0.99, (4, 3))
    t = (r.random((4, 3)) < 0.5).astype(float)
    assert abs(bce(s, t)[0] - oracles.bce(s, t)) < 1e-12


# -- gradients ---------------------------------------------------------------

CONFIGS = [
    LossConfig("ce", 4),
    LossConfig("cce", 4),
    LossConfig("cce", 4, beta=-2.5),
    LossConfig("focal", 4),
    LossConfig("focal", 4, gamma=0.5, alpha=(0.5, 1.0, 2.0, 1.5)),
    LossConfig("bce", 4),
]


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.kind}-{c.beta}-{c.gamma}")
def test_gradient_from_logits(cfg):
    r = make_rng(7)
    z = r.standard_normal((5, 4))
    y = r.integers(0, 4, 5)
    rep = check_scalar(lambda v: loss_from_logits(v, y, cfg)[0], lambda v: loss_from_logits(v, y, cfg)[2], z)
    assert rep.max_rel_err < 1e-4


def test_complement_gradient_on_probabilities():
    p, y = _batch(9, P=5)
    rep = check_scalar(lambda v: complement_entropy(v, y)[0], lambda v: complement_entropy(v, y)[1], p)
    assert rep.max_rel_err < 1e-4
