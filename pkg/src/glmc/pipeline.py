"""Batch assembly: normalisation, crop/flip augmentation, and bounded prefetch."""
from __future__ import annotations

import queue
import threading
from dataclasses import dataclass

import numpy as np
import torch

from .samplers import Sampler


@dataclass
class Normalization:
    mean: list
    std: list

    @classmethod
    def from_images(cls, images: np.ndarray) -> "Normalization":
        x = images.reshape(-1, images.shape[-1]).astype(np.float64)
        if images.dtype == np.uint8:
            x /= 255.0
        std = x.std(axis=0)
        std[std == 0] = 1.0
        return cls(x.mean(axis=0).tolist(), std.tolist())

    def __call__(self, images: np.ndarray) -> torch.Tensor:
        """(N, H, W, C) array -> normalised float32 (N, C, H, W) tensor."""
        x = torch.from_numpy(np.ascontiguousarray(images)).permute(0, 3, 1, 2).float()
        if images.dtype == np.uint8:
            x = x / 255.0
        mean = torch.tensor(self.mean, dtype=torch.float32).view(1, -1, 1, 1)
        std = torch.tensor(self.std, dtype=torch.float32).view(1, -1, 1, 1)
        return (x - mean) / std


def random_crop_flip(x: torch.Tensor, rng: np.random.Generator, padding: int = 4) -> torch.Tensor:
    """Per-sample random crop from a zero-padded image, then horizontal flip with p=0.5."""
    n, _, h, w = x.shape
    padded = torch.nn.functional.pad(x, (padding, padding, padding, padding))
    offs = rng.integers(0, 2 * padding + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    out = torch.empty_like(x)
    for i in range(n):
        dy, dx = offs[i]
        crop = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = crop.flip(-1) if flips[i] else crop
    return out


class BatchStream:
    """Turns sampler draws into ``(images, labels, weights)`` tensors.

    Augmentation draws from its own RNG so two streams never share randomness.
    With ``prefetch > 0`` a producer thread runs ahead by at most that many
    batches; batches still come out in draw order.
    """

    def __init__(self, sampler: Sampler, normalize: Normalization, augment: bool,
                 seed, prefetch: int = 0):
        self.sampler = sampler
        self.normalize = normalize
        self.augment = augment
        self.rng = np.random.default_rng(seed)
        self.prefetch = prefetch

    def next_batch(self, batch_size: int):
        b = self.sampler.draw_batch(batch_size)
        x = self.normalize(b.images)
        if self.augment:
            x = random_crop_flip(x, self.rng)
        return (x, torch.from_numpy(b.labels), torch.from_numpy(b.weights).float())

    def take(self, n: int, batch_size: int):
        if self.prefetch <= 0:
            for _ in range(n):
                yield self.next_batch(batch_size)
            return
        q: queue.Queue = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()

        def put(item):
            while not stop.is_set():
                try:
                    q.put(item, timeout=0.1)
                    return True
                except queue.Full:
                    pass
            return False

        def produce():
            try:
                for _ in range(n):
                    if not put(self.next_batch(batch_size)):
                        return
            except BaseException as e:  # surfaced on the consumer side
                put(e)

        t = threading.Thread(target=produce, daemon=True)
        t.start()
        try:
            for _ in range(n):
                item = q.get()
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            stop.set()
            t.join()


def iterate_in_order(dataset, normalize: Normalization, batch_size: int = 512):
    """Sequential, unaugmented pass for evaluation and feature extraction."""
    for start in range(0, len(dataset), batch_size):
        sl = slice(start, start + batch_size)
        yield normalize(dataset.images[sl]), torch.from_numpy(dataset.labels[sl])
