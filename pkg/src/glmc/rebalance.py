"""Inverse-frequency class weights and the cumulative conventional/rebalanced schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .longtail_data import ClassFrequencyTable


@dataclass
class RebalanceConfig:
    reweight_k: float = 1.0
    gamma: float = 10.0

    def __post_init__(self):
        if self.reweight_k < 0:
            raise ValueError(f"reweight_k must be >= 0, got {self.reweight_k}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def class_weights(table: ClassFrequencyTable, k: float) -> np.ndarray:
    """``w_i = C * (1/r_i)**k / sum_j (1/r_j)**k``; the weights sum to C."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    r = table.frequencies if isinstance(table, ClassFrequencyTable) else np.asarray(table, float)
    if (r <= 0).any():
        raise ValueError("class frequencies must be positive")
    # (1/r)^k = exp(-k log r); shift by the max exponent so large k cannot overflow
    log_inv = -k * np.log(r)
    z = np.exp(log_inv - log_inv.max())
    return r.size * z / z.sum()


def alpha(epoch: int, t_max: int) -> float:
    """Weight of the conventional loss at the start of ``epoch``: ``1 - (epoch/t_max)**2``."""
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if not 0 <= epoch <= t_max:
        raise ValueError(f"epoch {epoch} outside [0, {t_max}]")
    return 1.0 - (epoch / t_max) ** 2


@dataclass(frozen=True)
class CumulativeSchedule:
    t_max: int

    def __call__(self, epoch: int) -> float:
        return alpha(epoch, self.t_max)

    def values(self) -> list[float]:
        return [alpha(e, self.t_max) for e in range(self.t_max + 1)]
