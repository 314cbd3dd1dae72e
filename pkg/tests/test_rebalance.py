import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glmc.longtail_data import ClassFrequencyTable
from glmc.rebalance import CumulativeSchedule, alpha, class_weights


def test_k_zero_no_reweighting():
    np.testing.assert_array_equal(class_weights(ClassFrequencyTable([500, 50, 5]), 0), 1.0)


def test_two_class_k1():
    # 2*(1/0.9)/(1/0.9 + 1/0.1) = 0.2, 2*(1/0.1)/(...) = 1.8
    w = class_weights(ClassFrequencyTable([90, 10]), 1.0)
    np.testing.assert_allclose(w, [0.2, 1.8], rtol=1e-12)


@pytest.mark.parametrize("k", [0.0, 0.5, 1.0, 2.7])
def test_balanced_is_flat(k):
    np.testing.assert_allclose(class_weights(ClassFrequencyTable([30] * 6), k), 1.0)


def test_negative_k_rejected():
    with pytest.raises(ValueError):
        class_weights(ClassFrequencyTable([2, 1]), -0.1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 10_000), min_size=2, max_size=50), st.floats(0, 3))
def test_weights_sum_and_monotone(counts, k):
    table = ClassFrequencyTable(counts)
    w = class_weights(table, k)
    assert abs(w.sum() - len(counts)) < 1e-6
    assert (w > 0).all()
    order = np.argsort(table.frequencies, kind="stable")
    assert (np.diff(w[order]) <= 1e-12).all()


def test_alpha_examples():
    assert alpha(0, 200) == 1.0
    assert alpha(200, 200) == 0.0
    assert alpha(100, 200) == 0.75


def test_alpha_out_of_range():
    with pytest.raises(ValueError):
        alpha(11, 10)


def test_alpha_strictly_decreasing_quadratic():
    vals = np.array(CumulativeSchedule(50).values())
    assert (np.diff(vals) < 0).all()
    assert (np.diff(-np.diff(vals)) > 0).all()
