"""Deterministic long-tailed subsets of balanced labelled datasets.

Class ``i`` (0-indexed) keeps ``round(max_count * mu**i)`` samples where
``mu = IF ** (-1 / (C - 1))``, so the head class keeps ``max_count`` and the
tail class keeps ``max_count / IF``.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

MANIFEST_NAME = "manifest.json"
INDEX_NAME = "indices.txt"


class LongTailError(ValueError):
    pass


@dataclass(frozen=True)
class ImbalanceSpec:
    num_classes: int
    max_count: int
    imbalance_factor: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise LongTailError(f"num_classes must be positive, got {self.num_classes}")
        if self.max_count < 1:
            raise LongTailError(f"max_count must be positive, got {self.max_count}")
        if not self.imbalance_factor >= 1.0:
            raise LongTailError(f"imbalance_factor must be >= 1, got {self.imbalance_factor}")
        if self.max_count / self.imbalance_factor < 1.0:
            raise LongTailError(
                f"max_count / imbalance_factor = {self.max_count / self.imbalance_factor:.3g} "
                "leaves the tail class empty")
        if self.num_classes == 1 and self.imbalance_factor != 1.0:
            raise LongTailError("a single class cannot have imbalance_factor != 1")

    @property
    def decay_mu(self) -> float:
        if self.num_classes == 1:
            return 1.0
        return float(self.imbalance_factor) ** (-1.0 / (self.num_classes - 1))


@dataclass
class ClassFrequencyTable:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size == 0:
            raise LongTailError("counts must be a non-empty vector")
        if (self.counts < 1).any():
            raise LongTailError(f"every class needs at least one sample, got {self.counts.tolist()}")

    @property
    def num_classes(self) -> int:
        return int(self.counts.size)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @classmethod
    def from_labels(cls, labels, num_classes: int) -> "ClassFrequencyTable":
        return cls(np.bincount(np.asarray(labels), minlength=num_classes))


@dataclass
class Manifest:
    table: ClassFrequencyTable
    spec: Optional[ImbalanceSpec] = None
    source: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "counts": self.table.counts.tolist(),
            "frequencies": self.table.frequencies.tolist(),
            "spec": None if self.spec is None else asdict(self.spec),
            "decay_mu": None if self.spec is None else self.spec.decay_mu,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        spec = None if d.get("spec") is None else ImbalanceSpec(**d["spec"])
        return cls(ClassFrequencyTable(d["counts"]), spec, dict(d.get("source", {})))


@dataclass
class LabeledDataset:
    """In-memory image set: ``images`` is (N, H, W, channels) uint8 or float.

    ``ids`` are sample identifiers in the source split and ``weights`` is the
    per-sample weight slot (all ones until rebalancing weights are attached).
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    ids: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    manifest: Optional[Manifest] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise LongTailError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LongTailError(f"labels must lie in [0, {self.num_classes})")
        if self.ids is None:
            self.ids = np.arange(len(self.labels), dtype=np.int64)
        if self.weights is None:
            self.weights = np.ones(len(self.labels), dtype=np.float64)
        if self.manifest is None and len(self.labels):
            counts = np.bincount(self.labels, minlength=self.num_classes)
            if (counts > 0).all():
                self.manifest = Manifest(ClassFrequencyTable(counts))

    def __len__(self):
        return len(self.labels)

    @property
    def table(self) -> ClassFrequencyTable:
        if self.manifest is None:
            raise LongTailError("dataset has an empty class; no frequency table")
        return self.manifest.table

    def class_indices(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.num_classes)]

    def subset(self, positions) -> "LabeledDataset":
        positions = np.asarray(positions, dtype=np.int64)
        return LabeledDataset(self.images[positions], self.labels[positions], self.num_classes,
                              ids=self.ids[positions], weights=self.weights[positions])

    def with_class_weights(self, class_weights) -> "LabeledDataset":
        class_weights = np.asarray(class_weights, dtype=np.float64)
        return replace(self, weights=class_weights[self.labels])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def compute_class_counts(spec: ImbalanceSpec) -> np.ndarray:
    mu = spec.decay_mu
    counts = [max(1, _round_half_up(spec.max_count * mu ** i)) for i in range(spec.num_classes)]
    return np.asarray(counts, dtype=np.int64)


def imbalance_factor(table: ClassFrequencyTable) -> float:
    counts = table.counts if isinstance(table, ClassFrequencyTable) else np.asarray(table)
    return float(counts.max() / counts.min())


def build_longtail_subset(balanced: LabeledDataset, spec: ImbalanceSpec) -> LabeledDataset:
    if spec.num_classes != balanced.num_classes:
        raise LongTailError(
            f"spec has {spec.num_classes} classes, dataset has {balanced.num_classes}")
    counts = compute_class_counts(spec)
    rng = np.random.default_rng(spec.seed)
    keep = []
    for c, pool in enumerate(balanced.class_indices()):
        if len(pool) < counts[c]:
            raise LongTailError(
                f"class {c} has {len(pool)} source samples but {counts[c]} are required")
        keep.append(np.sort(rng.choice(pool, size=counts[c], replace=False)))
    positions = np.concatenate(keep)
    out = balanced.subset(positions)
    source = {}
    if balanced.manifest is not None:
        source = dict(balanced.manifest.source)
    out.manifest = Manifest(ClassFrequencyTable(counts), spec, source)
    return out


def source_hash(images: np.ndarray, labels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(images).tobytes())
    return h.hexdigest()


def write_manifest(out_dir: str, dataset: LabeledDataset) -> str:
    """Write ``manifest.json`` and ``indices.txt`` (one retained source id per line)."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        json.dump(dataset.manifest.to_dict(), f, indent=2)
        f.write("\n")
    np.savetxt(os.path.join(out_dir, INDEX_NAME), dataset.ids, fmt="%d")
    return path


def read_manifest(data_dir: str) -> tuple[Manifest, np.ndarray]:
    with open(os.path.join(data_dir, MANIFEST_NAME)) as f:
        manifest = Manifest.from_dict(json.load(f))
    ids = np.atleast_1d(np.loadtxt(os.path.join(data_dir, INDEX_NAME), dtype=np.int64))
    return manifest, ids


def subset_by_ids(source: LabeledDataset, ids, manifest: Manifest) -> LabeledDataset:
    lookup = {int(i): p for p, i in enumerate(source.ids)}
    try:
        positions = [lookup[int(i)] for i in ids]
    except KeyError as e:
        raise LongTailError(f"sample id {e.args[0]} not present in the source split") from None
    out = source.subset(positions)
    actual = np.bincount(out.labels, minlength=out.num_classes)
    if not np.array_equal(actual, manifest.table.counts):
        raise LongTailError("index file does not reproduce the manifest class counts")
    out.manifest = manifest
    return out
