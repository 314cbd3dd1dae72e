import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glmc.evaluation import (EvalReport, assign_groups, confusion_matrix, per_class_accuracy,
                             report_from_predictions)
from glmc.longtail_data import ClassFrequencyTable


def test_group_boundaries():
    t = ClassFrequencyTable([150, 101, 100, 50, 21, 20, 1])
    assert assign_groups(t) == ["many", "many", "medium", "medium", "medium", "few", "few"]


def test_perfect_predictor():
    labels = np.repeat(np.arange(3), 10)
    r = report_from_predictions(labels, labels, ClassFrequencyTable([150, 20, 50]))
    assert r.top1_overall == r.top1_many == r.top1_medium == r.top1_few == 1.0


def test_constant_predictor():
    labels = np.repeat(np.arange(3), 10)
    r = report_from_predictions(labels, np.zeros(30, int), ClassFrequencyTable([150, 20, 50]))
    assert r.top1_overall == pytest.approx(1 / 3)
    assert (r.top1_many, r.top1_medium, r.top1_few) == (1.0, 0.0, 0.0)


def test_empty_group_is_nan_and_serialises_as_null(tmp_path):
    labels = np.arange(2).repeat(5)
    r = report_from_predictions(labels, labels, ClassFrequencyTable([500, 200]))
    assert math.isnan(r.top1_few) and math.isnan(r.top1_medium)
    r.save(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["top1_few"] is None
    back = EvalReport.from_dict(d)
    assert math.isnan(back.top1_few) and back.top1_many == 1.0


def test_empty_test_set():
    with pytest.raises(ValueError):
        report_from_predictions([], [], ClassFrequencyTable([1, 2]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_recount_oracle_and_weighted_mean(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 12))
    counts = rng.choice([5, 20, 21, 60, 100, 101, 400], size=c)
    labels = rng.integers(0, c, size=200)
    preds = np.where(rng.random(200) < 0.6, labels, rng.integers(0, c, size=200))
    r = report_from_predictions(labels, preds, ClassFrequencyTable(counts))
    assert r.top1_overall == np.mean(labels == preds)
    conf = confusion_matrix(labels, preds, c)
    assert conf.sum() == 200
    total = 0.0
    for g, acc in (("many", r.top1_many), ("medium", r.top1_medium), ("few", r.top1_few)):
        members = [k for k in range(c) if r.group_assignment[k] == g]
        mask = np.isin(labels, members)
        if mask.any():
            assert acc == pytest.approx(np.mean(labels[mask] == preds[mask]))
            total += acc * mask.sum()
        else:
            assert math.isnan(acc)
    assert total / 200 == pytest.approx(r.top1_overall)


def test_per_class_accuracy():
    conf = np.array([[3, 1], [0, 0]])
    acc = per_class_accuracy(conf)
    assert acc[0] == 0.75 and math.isnan(acc[1])
