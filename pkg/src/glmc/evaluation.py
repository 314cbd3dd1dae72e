"""Balanced test-set evaluation with Many/Medium/Few group accuracies.

Groups come from the *training* class counts: more than 100 samples is Many,
21 to 100 is Medium, 20 or fewer is Few.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .longtail_data import ClassFrequencyTable, LabeledDataset
from .pipeline import Normalization, iterate_in_order

MANY, MEDIUM, FEW = "many", "medium", "few"
GROUPS = (MANY, MEDIUM, FEW)
MANY_ABOVE = 100
FEW_AT_MOST = 20


@dataclass
class EvalReport:
    top1_overall: float
    top1_many: float
    top1_medium: float
    top1_few: float
    confusion: np.ndarray
    group_assignment: list
    group_sizes: dict

    def to_dict(self) -> dict:
        return {
            "top1_overall": self.top1_overall,
            "top1_many": _nan_to_none(self.top1_many),
            "top1_medium": _nan_to_none(self.top1_medium),
            "top1_few": _nan_to_none(self.top1_few),
            "group_sizes": self.group_sizes,
            "group_assignment": list(self.group_assignment),
            "per_class_accuracy": [_nan_to_none(a) for a in per_class_accuracy(self.confusion)],
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["top1_overall"], _none_to_nan(d["top1_many"]),
                   _none_to_nan(d["top1_medium"]), _none_to_nan(d["top1_few"]),
                   np.asarray(d["confusion"], dtype=np.int64), d["group_assignment"],
                   d["group_sizes"])

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)


def _nan_to_none(x):
    return None if x is None or np.isnan(x) else float(x)


def _none_to_nan(x):
    return float("nan") if x is None else float(x)


def assign_groups(train_table: ClassFrequencyTable) -> list:
    tags = []
    for n in train_table.counts:
        if n > MANY_ABOVE:
            tags.append(MANY)
        elif n <= FEW_AT_MOST:
            tags.append(FEW)
        else:
            tags.append(MEDIUM)
    return tags


def confusion_matrix(labels, preds, num_classes) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    flat = np.bincount(labels * num_classes + preds, minlength=num_classes * num_classes)
    return flat.reshape(num_classes, num_classes)


def per_class_accuracy(confusion: np.ndarray) -> np.ndarray:
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.diag(confusion) / support


def report_from_predictions(labels, preds, train_table: ClassFrequencyTable) -> EvalReport:
    if len(labels) == 0:
        raise ValueError("empty test set")
    c = train_table.num_classes
    conf = confusion_matrix(labels, preds, c)
    groups = assign_groups(train_table)
    correct = np.diag(conf)
    support = conf.sum(axis=1)
    accs, sizes = {}, {}
    for g in GROUPS:
        sel = np.array([t == g for t in groups])
        n = int(support[sel].sum())
        sizes[g] = {"classes": int(sel.sum()), "test_samples": n}
        accs[g] = float(correct[sel].sum() / n) if n else float("nan")
    overall = float(np.trace(conf) / conf.sum())
    return EvalReport(overall, accs[MANY], accs[MEDIUM], accs[FEW], conf, groups, sizes)


@torch.no_grad()
def predict(network, dataset: LabeledDataset, normalize: Normalization, head_mode="longtail",
            batch_size=512) -> np.ndarray:
    network.eval()
    dtype = next(network.parameters()).dtype
    preds = []
    for x, _ in iterate_in_order(dataset, normalize, batch_size):
        preds.append(network.inference_logits(x.to(dtype), head_mode).argmax(1).numpy())
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def evaluate(network, test_set: LabeledDataset, train_table: ClassFrequencyTable,
             normalize: Normalization, head_mode="longtail") -> EvalReport:
    if len(test_set) == 0:
        raise ValueError("empty test set")
    preds = predict(network, test_set, normalize, head_mode)
    return report_from_predictions(test_set.labels, preds, train_table)
