import numpy as np
import pytest

from glmc.longtail_data import ClassFrequencyTable, LabeledDataset
from glmc.samplers import Sampler, SamplerConfig, class_sampling_probs, draw_batch


def dataset_with_counts(counts):
    labels = np.repeat(np.arange(len(counts)), counts)
    return LabeledDataset(np.zeros((labels.size, 2, 2, 1), np.uint8), labels, len(counts))


def test_two_class_k1_probs():
    np.testing.assert_allclose(class_sampling_probs(ClassFrequencyTable([90, 10]), 1.0),
                               [0.1, 0.9], rtol=1e-12)


def test_balanced_table_uniform_probs():
    np.testing.assert_allclose(class_sampling_probs(ClassFrequencyTable([5] * 8), 0.7), 1 / 8)


def test_negative_k_rejected():
    with pytest.raises(ValueError):
        SamplerConfig("reversed", resample_k=-1.0)


def test_large_k_warns():
    with pytest.warns(UserWarning):
        Sampler(dataset_with_counts([10, 2]), SamplerConfig("reversed", 0.8))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        Sampler(dataset_with_counts([0, 0]), SamplerConfig())


def test_batch_size_one():
    b = draw_batch(dataset_with_counts([3, 1]), SamplerConfig("reversed", 0.2), 1)
    assert b.labels.shape == (1,) and b.images.shape[0] == 1


def three_sigma_ok(observed, probs, n):
    sigma = np.sqrt(n * probs * (1 - probs))
    return np.all(np.abs(observed - n * probs) <= 3 * sigma + 1e-9)


def test_uniform_stream_matches_class_frequencies():
    counts = [500, 150, 40, 10]
    s = Sampler(dataset_with_counts(counts), SamplerConfig("uniform", seed=1))
    labels = np.concatenate([s.draw_batch(64).labels for _ in range(300)])
    freq = np.array(counts) / sum(counts)
    assert three_sigma_ok(np.bincount(labels, minlength=4), freq, labels.size)


def test_uniform_stream_visits_each_sample_once_per_pass():
    ds = dataset_with_counts([7, 5])
    pos = Sampler(ds, SamplerConfig(seed=3)).draw_positions(24)
    assert sorted(pos[:12]) == list(range(12)) and sorted(pos[12:]) == list(range(12))


@pytest.mark.parametrize("k", [0.2, 1.0])
@pytest.mark.filterwarnings("ignore:resample_k")
def test_reversed_stream_matches_formula(k):
    counts = [500, 150, 40, 10]
    s = Sampler(dataset_with_counts(counts), SamplerConfig("reversed", k, seed=2))
    labels = np.concatenate([s.draw_batch(64).labels for _ in range(300)])
    r = np.array(counts) / sum(counts)
    p = r ** -k / (r ** -k).sum()
    assert three_sigma_ok(np.bincount(labels, minlength=4), p, labels.size)


def test_seeded_streams_reproduce():
    ds = dataset_with_counts([30, 10, 3])
    a = Sampler(ds, SamplerConfig("reversed", 0.3, seed=9)).draw_positions(50)
    b = Sampler(ds, SamplerConfig("reversed", 0.3, seed=9)).draw_positions(50)
    assert np.array_equal(a, b)
