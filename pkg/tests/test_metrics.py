import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dacbnet import oracles
from dacbnet.core.rng import make_rng
from dacbnet.metrics import InputError, auc_binary, confusion, evaluate_predictions, prf1, roc_auc

seeds = st.integers(0, 2**32 - 1)


def test_perfect_predictions_are_diagonal():
    y = np.array([0, 1, 2, 2, 1])
    cm = confusion(y, y, 3).counts
    assert np.array_equal(cm, np.diag([1, 2, 2]))


def test_all_class_zero_is_single_column():
    cm = confusion([0, 1, 2, 1], [0, 0, 0, 0], 3).counts
    assert cm[:, 0].tolist() == [1, 2, 1] and not cm[:, 1:].any()


def test_confusion_length_mismatch():
    with pytest.raises(InputError):
        confusion([0, 1], [0], 2)


@given(seeds)
def test_confusion_and_scores_vs_counting_oracle(seed):
    r = make_rng(seed)
    P = int(r.integers(2, 6))
    yt, yp = r.integers(0, P, 50), r.integers(0, P, 50)
    cm = confusion(yt, yp, P)
    assert np.array_equal(cm.counts, oracles.confusion(yt, yp, P))
    scores = prf1(cm)
    for c in range(P):
        counts = oracles.per_class_counts(yt, yp, c)
        assert cm.one_vs_rest(c) == counts
        p, rc, f = oracles.precision_recall_f1(*counts[:3])
        got = scores.per_class[c]
        assert abs(got.precision - p) < 1e-12 and abs(got.recall - rc) < 1e-12 and abs(got.f1 - f) < 1e-12
    assert abs(scores.macro.f1 - np.mean([s.f1 for s in scores.per_class])) < 1e-12


def test_tp8_fp2_fn2():
    # class 0: 8 hits, 2 missed as class 1, 2 class-1 samples predicted 0
    yt = [0] * 10 + [1] * 2 + [1] * 5
    yp = [0] * 8 + [1] * 2 + [0] * 2 + [1] * 5
    c = prf1(confusion(yt, yp, 2)).per_class[0]
    assert (c.precision, c.recall, c.f1) == pytest.approx((0.8, 0.8, 0.8), abs=1e-15)


def test_perfect_diagonal_scores_one():
    s = prf1(confusion([0, 1, 2, 0], [0, 1, 2, 0], 3))
    assert s.accuracy == 1.0 and s.macro.f1 == 1.0 and s.micro.precision == 1.0
    assert all(c.precision == c.recall == c.f1 == 1.0 for c in s.per_class)


def test_undefined_metrics_are_flagged_zero():
    s = prf1(confusion([0, 0, 1], [0, 0, 0], 3))
    assert s.per_class[2].precision == 0.0 and "precision" in s.per_class[2].undefined
    assert "recall" in s.per_class[2].undefined and not s.per_class[0].undefined


@given(seeds)
def test_micro_precision_recall_equal_accuracy(seed):
    r = make_rng(seed)
    yt, yp = r.integers(0, 4, 40), r.integers(0, 4, 40)
    s = prf1(confusion(yt, yp, 4))
    assert abs(s.micro.precision - s.accuracy) < 1e-12 and abs(s.micro.recall - s.accuracy) < 1e-12


# -- ROC / AUC ---------------------------------------------------------------

def test_auc_examples():
    assert auc_binary([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc_binary([0.5] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert auc_binary([0.1, 0.2], [1, 1]) is None


@given(seeds, st.booleans())
def test_auc_vs_mann_whitney(seed, ties):
    r = make_rng(seed)
    s = r.random(30)
    if ties:
        s = np.round(s, 1)
    y = r.random(30) < 0.4
    y[:2] = [True, False]
    assert abs(auc_binary(s, y) - oracles.mann_whitney_auc(s, y)) < 1e-10


@given(seeds)
def test_auc_invariances(seed):
    r = make_rng(seed)
    s, y = r.standard_normal(25), r.random(25) < 0.5
    y[:2] = [True, False]
    a = auc_binary(s, y)
    assert abs(auc_binary(np.exp(3 * s) + 1, y) - a) < 1e-12
    assert abs(auc_binary(-s, y) - (1 - a)) < 1e-12


def test_absent_class_is_omitted_from_macro():
    probs = np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    rep = roc_auc(probs, [0, 1, 0])
    assert rep.auc[2] is None and rep.omitted == [2]
    assert rep.macro_auc == pytest.approx(np.mean(rep.auc[:2]))
    with pytest.raises(InputError):
        roc_auc(np.array([[np.nan, 1.0]]), [0])


def test_report_write_is_idempotent(tmp_path):
    r = make_rng(0)
    probs = r.dirichlet(np.ones(3), 20)
    rep = evaluate_predictions(probs, r.integers(0, 3, 20), ["a", "b", "c"])
    paths = rep.write(tmp_path / "one")
    first = {p: open(p, "rb").read() for p in paths}
    rep.write(tmp_path / "one")
    assert all(open(p, "rb").read() == b for p, b in first.items())
    assert rep.confusion.total == 20 and "accuracy" in rep.to_text()
