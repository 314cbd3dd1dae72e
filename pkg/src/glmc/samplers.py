"""Uniform and reversed (inverse-frequency) batch samplers.

The trainer draws one batch from each stream per step and pairs element ``i``
of the uniform batch with element ``i`` of the reversed batch.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .longtail_data import ClassFrequencyTable, LabeledDataset

RESAMPLE_K_WARN = 0.4


@dataclass
class SamplerConfig:
    mode: str = "uniform"
    resample_k: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("uniform", "reversed"):
            raise ValueError(f"sampler mode must be 'uniform' or 'reversed', got {self.mode!r}")
        if self.resample_k < 0:
            raise ValueError(f"resample_k must be >= 0, got {self.resample_k}")


class Batch(NamedTuple):
    images: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    positions: np.ndarray


def class_sampling_probs(table: ClassFrequencyTable, resample_k: float) -> np.ndarray:
    """``p_i ∝ (1/r_i)**k``; ``k = 0`` gives every class the same probability."""
    if resample_k < 0:
        raise ValueError(f"resample_k must be >= 0, got {resample_k}")
    r = table.frequencies
    log_p = -resample_k * np.log(r)
    p = np.exp(log_p - log_p.max())
    return p / p.sum()


class Sampler:
    """Draws batches from one dataset with a private RNG stream.

    Uniform mode walks reshuffled permutations of the dataset, so every sample
    is equally likely. Reversed mode picks a class from
    :func:`class_sampling_probs` and then a member uniformly, with replacement.
    """

    def __init__(self, dataset: LabeledDataset, config: SamplerConfig):
        if len(dataset) == 0:
            raise ValueError("cannot sample from an empty dataset")
        self.dataset = dataset
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self._perm = np.empty(0, dtype=np.int64)
        self._cursor = 0
        if config.mode == "reversed":
            if config.resample_k > RESAMPLE_K_WARN:
                warnings.warn(f"resample_k={config.resample_k} exceeds {RESAMPLE_K_WARN}; "
                              "strong resampling tends to hurt accuracy", stacklevel=2)
            self.class_probs = class_sampling_probs(dataset.table, config.resample_k)
            self._members = dataset.class_indices()

    def draw_positions(self, batch_size: int) -> np.ndarray:
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if self.config.mode == "uniform":
            out = []
            need = batch_size
            while need:
                if self._cursor >= len(self._perm):
                    self._perm = self.rng.permutation(len(self.dataset))
                    self._cursor = 0
                take = self._perm[self._cursor:self._cursor + need]
                self._cursor += len(take)
                need -= len(take)
                out.append(take)
            return np.concatenate(out)
        classes = self.rng.choice(len(self.class_probs), size=batch_size, p=self.class_probs)
        return np.array([self._members[c][self.rng.integers(len(self._members[c]))]
                         for c in classes], dtype=np.int64)

    def draw_batch(self, batch_size: int) -> Batch:
        pos = self.draw_positions(batch_size)
        ds = self.dataset
        return Batch(ds.images[pos], ds.labels[pos], ds.weights[pos], pos)


def draw_batch(dataset: LabeledDataset, config: SamplerConfig, batch_size: int) -> Batch:
    """One-off batch from a fresh sampler seeded by ``config.seed``."""
    return Sampler(dataset, config).draw_batch(batch_size)
