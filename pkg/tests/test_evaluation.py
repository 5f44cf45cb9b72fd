import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from cmtssl.errors import DataError, DegenerateInputError, ShapeError
from cmtssl.evaluation import ConfusionMatrix, MetricReport, aggregate_runs, confusion, metrics


def test_reference_matrix():
    rep = metrics(ConfusionMatrix([[40, 10], [20, 30]]))
    assert rep.oa == pytest.approx(0.7, abs=1e-12)
    assert rep.aa == pytest.approx(0.7, abs=1e-12)
    assert rep.kappa == pytest.approx(0.4, abs=1e-12)
    assert rep.per_class_accuracy == pytest.approx([0.8, 0.6])


def test_perfect_prediction():
    truth = np.array([0, 1, 2, 2, 1, 0])
    rep = metrics(confusion(truth, truth, 3))
    assert (rep.oa, rep.aa, rep.kappa) == (1.0, 1.0, 1.0)


def test_single_class_everywhere():
    rep = metrics(ConfusionMatrix([[5, 0], [0, 0]]))
    assert rep.oa == 1.0 and rep.kappa == 1.0 and rep.aa == 1.0
    assert rep.per_class_accuracy[1] is None


def test_confusion_orientation_and_ignore(rng):
    truth = np.array([0, 0, 1, -1, 1])
    pred = np.array([0, 1, 1, 0, 0])
    np.testing.assert_array_equal(confusion(pred, truth, 2).counts, [[1, 1], [1, 1]])
    t = rng.integers(-1, 5, size=(20, 20))
    p = rng.integers(0, 5, size=(20, 20))
    np.testing.assert_array_equal(confusion(p, t, 5).counts, oracles.count_confusion(p, t, 5, -1))


def test_confusion_errors():
    with pytest.raises(DataError):
        confusion(np.array([0, 3]), np.array([0, 1]), 3)
    with pytest.raises(ShapeError):
        confusion(np.zeros(3), np.zeros(4), 2)
    with pytest.warns(RuntimeWarning):
        cm = confusion(np.zeros(3), np.full(3, -1), 2)
    with pytest.raises(DegenerateInputError):
        metrics(cm)


def test_kappa_bounded_by_oa_10k():
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        k = int(rng.integers(2, 6))
        cm = rng.integers(0, 50, size=(k, k))
        if cm.sum() == 0:
            continue
        rep = metrics(ConfusionMatrix(cm))
        assert rep.kappa <= rep.oa + 1e-12


@settings(max_examples=80, deadline=None)
@given(arrays(np.int64, (3, 3), elements=st.integers(0, 30)))
def test_metric_formulas(cm):
    if cm.sum() == 0:
        return
    rep = metrics(ConfusionMatrix(cm))
    total = cm.sum()
    oa = np.trace(cm) / total
    pe = sum(cm[i].sum() * cm[:, i].sum() for i in range(3)) / total**2
    assert rep.oa == pytest.approx(oa)
    if pe < 1:
        assert rep.kappa == pytest.approx((oa - pe) / (1 - pe))
    assert 0 <= rep.aa <= 1


def test_aggregate_sample_std():
    reps = [MetricReport(0.6, 0.5, 0.4, [0.5]), MetricReport(0.8, 0.7, 0.6, [0.7])]
    agg = aggregate_runs(reps)
    assert agg.oa == pytest.approx(0.7)
    assert agg.std["oa"] == pytest.approx(math.sqrt(0.02))
    assert agg.seeds == 2


def test_report_dict_roundtrip():
    rep = metrics(ConfusionMatrix([[40, 10], [20, 30]]))
    back = MetricReport.from_dict(rep.to_dict())
    assert back.kappa == rep.kappa
    assert rep.to_dict(percent=True)["oa"] == pytest.approx(70.0)
    assert "70.00" in rep.row()
