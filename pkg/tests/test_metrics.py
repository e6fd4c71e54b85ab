import numpy as np
import pytest

from bioscatter.errors import EmptyEvaluation, ShapeMismatch, ZeroBase
from bioscatter.metrics import (
    ConfusionCounts,
    check_table,
    confusion,
    evaluate,
    format_report_csv,
    harmonic_dice,
    metrics_from_counts,
    read_table_csv,
    relative_improvement,
)

# published result rows: (precision %, recall %, dice %)
PUBLISHED_ROWS = {
    "threshold": (6.98, 75.03, 12.77),
    "pretrained": (7.97, 74.60, 14.39),
    "supervised": (91.47, 33.94, 49.50),
    "finetuned": (78.04, 65.21, 71.05),
}


def test_confusion_examples():
    ones, zeros = np.ones((2, 2), bool), np.zeros((2, 2), bool)
    assert confusion(ones, ones, ones) == ConfusionCounts(tp=4)
    assert confusion(ones, zeros, ones) == ConfusionCounts(fp=4)
    valid = ones.copy()
    valid[0, 0] = False
    assert confusion(ones, zeros, valid).total == 3
    with pytest.raises(ShapeMismatch):
        confusion(ones, np.ones((3, 3), bool), None)


def test_metrics_examples():
    s = metrics_from_counts(ConfusionCounts(tp=5, fp=3, fn=2))
    assert (s.precision, s.recall, s.dice) == (0.625, 5 / 7, 10 / 15)
    s = metrics_from_counts(ConfusionCounts(tn=7))
    assert (s.precision, s.recall, s.dice, s.flags) == (1.0, 1.0, 1.0, ("empty",))
    s = metrics_from_counts(ConfusionCounts(fn=3))
    assert s.precision == 0.0 and s.dice == 0.0 and "no-predictions" in s.flags
    s = metrics_from_counts(ConfusionCounts(fp=3))
    assert s.recall == 0.0 and "no-positives" in s.flags


def test_harmonic_identity_on_random_counts(rng):
    for _ in range(200):
        tp, fp, fn = (int(v) for v in rng.integers(0, 1000, 3))
        tp += 1
        s = metrics_from_counts(ConfusionCounts(tp, fp, fn, 0))
        assert s.dice == pytest.approx(harmonic_dice(s.precision, s.recall), rel=1e-12)
        assert 0 <= s.dice <= 1


def test_dice_one_iff_identical(rng):
    truth = rng.random((8, 8)) > 0.5
    valid = rng.random((8, 8)) > 0.2
    assert evaluate([(truth, truth, valid)]).dice == 1.0
    pred = truth.copy()
    pred[~valid] = ~pred[~valid]  # differences off the valid mask do not count
    assert evaluate([(pred, truth, valid)]).dice == 1.0
    pred[valid.nonzero()[0][0], valid.nonzero()[1][0]] ^= True
    assert evaluate([(pred, truth, valid)]).dice < 1.0


def test_published_rows_are_consistent():
    for name, (p, r, d) in PUBLISHED_ROWS.items():
        assert abs(d - harmonic_dice(p, r)) <= 0.02, name
    rows = [(k, *v) for k, v in PUBLISHED_ROWS.items()]
    assert all(ok for *_, ok in check_table(rows))


def test_improvement_arithmetic():
    assert relative_improvement(71.05, 49.50) == pytest.approx(43.5354, abs=1e-4)
    assert abs(relative_improvement(71.05, 49.50) - 43.53) <= 0.02
    assert relative_improvement(65.21, 33.94) == pytest.approx(92.13, abs=0.005)
    assert relative_improvement(3.3, 3.3) == 0.0
    with pytest.raises(ZeroBase):
        relative_improvement(1.0, 0.0)


def _mask_with(tp, fp, fn, n=6):
    pred, truth = np.zeros(n * n, bool), np.zeros(n * n, bool)
    pred[:tp] = truth[:tp] = True
    pred[tp : tp + fp] = True
    truth[tp + fp : tp + fp + fn] = True
    return pred.reshape(n, n), truth.reshape(n, n), np.ones((n, n), bool)


def test_micro_aggregation(rng):
    a, b = _mask_with(1, 1, 0), _mask_with(3, 0, 1)
    rep = evaluate([a, b])
    assert rep.counts == ConfusionCounts(4, 1, 1, 72 - 6)
    assert rep.dice == 0.8
    assert evaluate([b]).dice == metrics_from_counts(confusion(*b)).dice
    triples = [_mask_with(*(int(v) for v in rng.integers(0, 8, 3))) for _ in range(10)]
    base = evaluate(triples)
    for _ in range(5):
        order = rng.permutation(10)
        shuffled = evaluate([triples[i] for i in order])
        assert shuffled.counts == base.counts and shuffled.dice == base.dice
    with pytest.raises(EmptyEvaluation):
        evaluate([])


def test_report_csv_layout():
    text = format_report_csv([evaluate([_mask_with(5, 3, 2)], model="m1"),
                              evaluate([_mask_with(0, 0, 0)], model="m2")])
    lines = text.splitlines()
    assert lines[0] == "model,precision_pct,recall_pct,dice_pct,flags"
    assert lines[1] == "m1,62.5000,71.4286,66.6667,"
    assert lines[2] == "m2,100.0000,100.0000,100.0000,empty"
    assert read_table_csv(text)[0] == ("m1", 62.5, 71.4286, 66.6667)
