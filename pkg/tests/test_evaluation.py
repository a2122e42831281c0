from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from resgcnn.evaluation import (MetricsReport, confusion_matrix, dumps_report, evaluate, metrics, parse_report,
                                report_from_confusion, serialize_report, write_confusion_csv)
from resgcnn.graph import GraphSample
from resgcnn.model import build_model
from conftest import SMALL_ARCH, random_adjacency

confusions = st.integers(2, 6).flatmap(
    lambda c: arrays(np.int64, (c, c), elements=st.integers(0, 50)).filter(lambda m: m.sum() > 0))


def test_worked_example():
    r = report_from_confusion([[8, 2], [3, 7]])
    assert r.precision[0] == pytest.approx(100 * 8 / 11, abs=1e-12)
    assert r.recall[0] == pytest.approx(80.0, abs=1e-12)
    assert r.f1[0] == pytest.approx(100 * 16 / 21, abs=1e-12)
    assert r.precision[1] == pytest.approx(100 * 7 / 9, abs=1e-12)
    assert r.recall[1] == pytest.approx(70.0, abs=1e-12)
    assert r.overall_accuracy == pytest.approx(75.0, abs=1e-12)


def test_confusion_orientation():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 0], 3)
    np.testing.assert_array_equal(cm, [[1, 1, 0], [0, 1, 0], [1, 0, 0]])


def test_confusion_errors():
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ValueError):
        confusion_matrix([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        report_from_confusion(np.zeros((2, 2), dtype=int))


def test_perfect_predictor():
    r = metrics([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert r.overall_accuracy == 100.0
    np.testing.assert_array_equal(r.confusion, np.diag([1, 1, 2]))


def test_undefined_cases_are_zero():
    r = metrics([0, 0, 1], [0, 0, 0], 3)
    assert r.precision[1] == 0.0 and r.f1[1] == 0.0  # never predicted
    assert r.recall[2] == 0.0 and r.precision[2] == 0.0  # never present


def test_uniform_random_predictor_near_chance():
    rng = np.random.default_rng(0)
    for c in (2, 4, 8):
        accs = [metrics(np.repeat(np.arange(c), 100), rng.integers(0, c, 100 * c), c).overall_accuracy
                for _ in range(10)]
        assert abs(np.mean(accs) - 100 / c) < 5


@given(confusions)
@settings(max_examples=200, deadline=None)
def test_invariants_exact(cm):
    r = report_from_confusion(cm)
    assert r.confusion.sum() == r.sample_count
    assert r.overall_accuracy == 100.0 * np.trace(cm) / cm.sum()
    for arr in (r.precision, r.recall, r.f1):
        assert np.all((arr >= 0) & (arr <= 100))
    t = report_from_confusion(cm.T)
    np.testing.assert_array_equal(t.precision, r.recall)
    np.testing.assert_array_equal(t.recall, r.precision)
    for i in range(cm.shape[0]):
        tp, pred, act = int(cm[i, i]), int(cm[:, i].sum()), int(cm[i].sum())
        p = Fraction(tp, pred) if pred else Fraction(0)
        q = Fraction(tp, act) if act else Fraction(0)
        f = 2 * p * q / (p + q) if p + q else Fraction(0)
        assert r.f1[i] == pytest.approx(100 * float(f), abs=1e-12)
        assert r.f1[i] <= max(r.precision[i], r.recall[i]) + 1e-12
        if r.precision[i] == r.recall[i]:
            assert r.f1[i] == pytest.approx(r.precision[i], abs=1e-12)


@given(confusions)
@settings(max_examples=100, deadline=None)
def test_serialization_round_trip(cm):
    r = report_from_confusion(cm, [f"c{i}" for i in range(cm.shape[0])])
    import json
    from resgcnn.evaluation import report_from_dict
    assert report_from_dict(json.loads(dumps_report(r))) == r


def test_report_file_format(tmp_path):
    r = report_from_confusion([[8, 2], [3, 7]], ["walk", "run"])
    serialize_report(r, tmp_path / "r.json")
    text = (tmp_path / "r.json").read_text()
    assert '"f1": 74.94' in text  # macro F1 to two decimals
    assert parse_report(tmp_path / "r.json") == r
    assert dumps_report(r) == text
    write_confusion_csv(r, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "8,2\n3,7\n"


def test_report_equality():
    a = report_from_confusion([[8, 2], [3, 7]])
    assert a == report_from_confusion([[8, 2], [3, 7]])
    assert a != report_from_confusion([[8, 2], [2, 8]])
    assert isinstance(a, MetricsReport)


def test_evaluate_ties_to_lowest_index(rng):
    # zero head: every class ties, so everything is predicted as class 0
    params = build_model(3, 0, SMALL_ARCH)
    samples = [GraphSample(rng.standard_normal((4, 16)), random_adjacency(rng, 4), i % 3) for i in range(6)]
    r = evaluate(params, samples)
    np.testing.assert_array_equal(r.confusion[:, 1:], 0)
    assert r.overall_accuracy == pytest.approx(100 / 3)
    with pytest.raises(ValueError):
        evaluate(params, [])
