"""Global (MixUp) and local (CutMix) mixed-label views of head/tail batch pairs.

Images are ``(N, channels, H, W)`` tensors. Both views of a batch share one
mix coefficient ``lam`` and therefore carry identical mixed labels and
weights. CutMix keeps ``x_i`` outside the box and pastes ``x_j`` inside, so
``x_i`` retains a pixel fraction of exactly ``lam`` whenever the box is not
clipped by the image border.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn.functional as F


@dataclass
class MixingConfig:
    beta: float = 1.0
    share_lambda_across_views: bool = True
    area_correct_lambda: bool = False
    seed: Optional[int] = None
    # pins lam for every batch; used for reduction checks against plain CE
    fixed_lambda: Optional[float] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"mix beta must be > 0, got {self.beta}")
        if self.fixed_lambda is not None and not 0.0 <= self.fixed_lambda <= 1.0:
            raise ValueError(f"fixed_lambda must lie in [0, 1], got {self.fixed_lambda}")


class CutBox(NamedTuple):
    x: int
    y: int
    w: int
    h: int
    raw_w: float
    raw_h: float

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass
class MixedBatch:
    x_global: torch.Tensor
    x_local: torch.Tensor
    p_mixed: torch.Tensor
    w_mixed: torch.Tensor
    lam: float
    box: CutBox
    # only set when the two views use separate coefficients
    p_local: Optional[torch.Tensor] = None
    w_local: Optional[torch.Tensor] = None
    lam_local: Optional[float] = None

    @property
    def local_targets(self):
        if self.p_local is None:
            return self.p_mixed, self.w_mixed
        return self.p_local, self.w_local


def sample_lambda(config: MixingConfig, rng: Optional[np.random.Generator] = None) -> float:
    if config.fixed_lambda is not None:
        return float(config.fixed_lambda)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return float(rng.beta(config.beta, config.beta))


def _check_pair(x_i, x_j, p_i, p_j, w_i, w_j):
    if x_i.shape != x_j.shape:
        raise ValueError(f"image shapes differ: {tuple(x_i.shape)} vs {tuple(x_j.shape)}")
    if p_i.shape != p_j.shape or w_i.shape != w_j.shape:
        raise ValueError("label or weight shapes differ between the mixed batches")
    if p_i.shape[0] != x_i.shape[0] or w_i.shape[0] != x_i.shape[0]:
        raise ValueError("labels/weights do not match the image batch size")


def mix_targets(p_i, p_j, w_i, w_j, lam):
    return lam * p_i + (1 - lam) * p_j, lam * w_i + (1 - lam) * w_j


def mixup(x_i, x_j, p_i, p_j, w_i, w_j, lam):
    _check_pair(x_i, x_j, p_i, p_j, w_i, w_j)
    if lam == 1.0:
        x = x_i.clone()
    elif lam == 0.0:
        x = x_j.clone()
    else:
        x = lam * x_i + (1 - lam) * x_j
    p, w = mix_targets(p_i, p_j, w_i, w_j, lam)
    return x, p, w


def sample_cutbox(width: int, height: int, lam: float,
                  rng: Optional[np.random.Generator] = None) -> CutBox:
    """Top-left corner uniform over the pixel grid, extents ``W*sqrt(1-lam)``, clipped."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    rng = rng if rng is not None else np.random.default_rng()
    cut = math.sqrt(1.0 - lam)
    raw_w, raw_h = width * cut, height * cut
    x = int(rng.integers(0, width))
    y = int(rng.integers(0, height))
    return clip_box(x, y, raw_w, raw_h, width, height)


def clip_box(x, y, raw_w, raw_h, width, height) -> CutBox:
    w = min(int(round(raw_w)), width - x)
    h = min(int(round(raw_h)), height - y)
    return CutBox(x, y, max(w, 0), max(h, 0), raw_w, raw_h)


def box_mask(box: CutBox, height: int, width: int) -> torch.Tensor:
    """1 where ``x_i`` is kept, 0 inside the pasted box."""
    m = torch.ones(height, width)
    m[box.y:box.y + box.h, box.x:box.x + box.w] = 0
    return m


def cutmix(x_i, x_j, p_i, p_j, w_i, w_j, lam, box: Optional[CutBox] = None,
           rng: Optional[np.random.Generator] = None):
    _check_pair(x_i, x_j, p_i, p_j, w_i, w_j)
    height, width = x_i.shape[-2:]
    if box is None:
        box = sample_cutbox(width, height, lam, rng)
    x = x_i.clone()
    x[..., box.y:box.y + box.h, box.x:box.x + box.w] = \
        x_j[..., box.y:box.y + box.h, box.x:box.x + box.w]
    p, w = mix_targets(p_i, p_j, w_i, w_j, lam)
    return x, p, w


class Mixer:
    """Owns the RNG stream for lam and CutMix boxes."""

    def __init__(self, config: MixingConfig, num_classes: int):
        self.config = config
        self.num_classes = num_classes
        self.rng = np.random.default_rng(config.seed)

    def __call__(self, uniform_batch, reversed_batch) -> MixedBatch:
        return make_mixed_batch(uniform_batch, reversed_batch, self.config,
                                self.num_classes, self.rng)


def make_mixed_batch(uniform_batch, reversed_batch, config: MixingConfig, num_classes: int,
                     rng: Optional[np.random.Generator] = None) -> MixedBatch:
    """Mix row ``i`` of the uniform batch with row ``i`` of the reversed batch.

    Each batch is ``(images, labels, weights)``; labels are class indices.
    """
    x_i, y_i, w_i = uniform_batch[:3]
    x_j, y_j, w_j = reversed_batch[:3]
    if x_i.shape[0] != x_j.shape[0]:
        raise ValueError(f"batch sizes differ: {x_i.shape[0]} vs {x_j.shape[0]}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    p_i = F.one_hot(y_i, num_classes).to(x_i.dtype)
    p_j = F.one_hot(y_j, num_classes).to(x_i.dtype)
    w_i, w_j = w_i.to(x_i.dtype), w_j.to(x_i.dtype)
    height, width = x_i.shape[-2:]

    lam = sample_lambda(config, rng)
    lam_local = lam if config.share_lambda_across_views else sample_lambda(config, rng)
    box = sample_cutbox(width, height, lam_local, rng)
    if config.area_correct_lambda:
        lam_local = 1.0 - box.area / (width * height)
        if config.share_lambda_across_views:
            lam = lam_local

    x_g, p_g, w_g = mixup(x_i, x_j, p_i, p_j, w_i, w_j, lam)
    x_l, p_l, w_l = cutmix(x_i, x_j, p_i, p_j, w_i, w_j, lam_local, box=box)
    if lam_local == lam:
        return MixedBatch(x_g, x_l, p_g, w_g, lam, box)
    return MixedBatch(x_g, x_l, p_g, w_g, lam, box, p_l, w_l, lam_local)
