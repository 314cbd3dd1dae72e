"""Balanced source datasets: CIFAR pickle batches, ``.npz`` archives, synthetic.

Nothing here downloads. CIFAR is read from the extracted python archive
(``cifar-10-batches-py`` / ``cifar-100-python``) under ``root`` or under the
directory named by ``GLMC_DATA_ROOT``.
"""
from __future__ import annotations

import os
import pickle

import numpy as np

from .longtail_data import LabeledDataset, Manifest, ClassFrequencyTable, source_hash

DATA_ROOT_ENV = "GLMC_DATA_ROOT"

_CIFAR_DIRS = {"cifar10": "cifar-10-batches-py", "cifar100": "cifar-100-python"}


class SourceNotFound(FileNotFoundError):
    pass


def resolve_root(root=None):
    root = root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise SourceNotFound(f"no dataset root given and ${DATA_ROOT_ENV} is unset")
    return root


def _unpickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def _find_cifar_dir(root, name):
    for cand in (os.path.join(root, _CIFAR_DIRS[name]), root):
        probe = "data_batch_1" if name == "cifar10" else "train"
        if os.path.exists(os.path.join(cand, probe)):
            return cand
    raise SourceNotFound(f"{name} python batches not found under {root!r}")


def load_cifar(name: str, split: str, root=None) -> LabeledDataset:
    base = _find_cifar_dir(resolve_root(root), name)
    if name == "cifar10":
        files = [f"data_batch_{i}" for i in range(1, 6)] if split == "train" else ["test_batch"]
        key, num_classes = "labels", 10
    else:
        files = ["train" if split == "train" else "test"]
        key, num_classes = "fine_labels", 100
    data, labels = [], []
    for fn in files:
        d = _unpickle(os.path.join(base, fn))
        data.append(np.asarray(d["data"], dtype=np.uint8))
        labels.extend(d[key])
    images = np.concatenate(data).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return _wrap(np.ascontiguousarray(images), np.asarray(labels), num_classes,
                 {"kind": name, "split": split, "root": root})


def load_npz(path: str, split: str) -> LabeledDataset:
    """Archive with ``x_train, y_train, x_test, y_test``; images are (N, H, W, C)."""
    with np.load(path) as z:
        x, y = z[f"x_{split}"], z[f"y_{split}"].reshape(-1)
    if x.ndim == 3:
        x = x[..., None]
    num_classes = int(y.max()) + 1
    return _wrap(x, y, num_classes, {"kind": "npz", "path": os.path.abspath(path), "split": split})


def synthetic_balanced(num_classes=10, per_class=5000, image_size=32, channels=3,
                       noise=0.35, seed=0, split="train") -> LabeledDataset:
    """Class-conditional images: a smooth per-class colour pattern plus noise and jitter.

    Prototypes depend only on ``seed``; ``split`` selects an independent noise stream,
    so train and test share classes but never samples.
    """
    proto_rng = np.random.default_rng(seed)
    coarse = proto_rng.uniform(0, 1, size=(num_classes, 4, 4, channels))
    reps = int(np.ceil(image_size / 4))
    protos = np.kron(coarse, np.ones((1, reps, reps, 1)))[:, :image_size, :image_size]

    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.repeat(np.arange(num_classes), per_class)
    images = np.empty((labels.size, image_size, image_size, channels), dtype=np.uint8)
    for start in range(0, labels.size, 4096):
        chunk = protos[labels[start:start + 4096]].astype(np.float32)
        n = len(chunk)
        shifts = rng.integers(-3, 4, size=(n, 2))
        for s in np.unique(shifts, axis=0):
            sel = np.all(shifts == s, axis=1)
            chunk[sel] = np.roll(chunk[sel], shift=tuple(s), axis=(1, 2))
        chunk *= rng.uniform(0.7, 1.3, size=(n, 1, 1, 1)).astype(np.float32)
        chunk += noise * rng.standard_normal(chunk.shape, dtype=np.float32)
        images[start:start + n] = (np.clip(chunk, 0, 1) * 255).astype(np.uint8)
    info = {"kind": "synthetic", "split": split, "num_classes": num_classes,
            "per_class": per_class, "image_size": image_size, "channels": channels,
            "noise": noise, "seed": seed}
    return _wrap(images, labels, num_classes, info)


def _wrap(images, labels, num_classes, info):
    ds = LabeledDataset(images, labels, num_classes)
    info = dict(info, sha256=source_hash(images, ds.labels))
    counts = np.bincount(ds.labels, minlength=num_classes)
    if (counts > 0).all():
        ds.manifest = Manifest(ClassFrequencyTable(counts), None, info)
    return ds


def load_source(source: dict, split: str) -> LabeledDataset:
    """Load a split from a source description (the ``source`` block of a manifest)."""
    kind = source["kind"]
    if kind in _CIFAR_DIRS:
        return load_cifar(kind, split, source.get("root"))
    if kind == "npz":
        return load_npz(source["path"], split)
    if kind == "synthetic":
        keys = ("num_classes", "per_class", "image_size", "channels", "noise", "seed")
        kw = {k: source[k] for k in keys if k in source}
        if split != "train" and "test_per_class" in source:
            kw["per_class"] = source["test_per_class"]
        return synthetic_balanced(split=split, **kw)
    raise ValueError(f"unknown source kind {kind!r}")
