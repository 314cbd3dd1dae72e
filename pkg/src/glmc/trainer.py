"""One-stage training: paired uniform/reversed batches, mixed views, cumulative loss.

``train`` runs the full method; ``train_baseline_ce`` runs the same harness with
plain cross-entropy on uniform batches (no mixing, consistency or reweighting).
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from . import longtail_data as ltd
from .config import ExperimentConfig, dump_config
from .evaluation import EvalReport, evaluate
from .losses import (LossBreakdown, consistency_loss, mixed_cross_entropy,
                     rebalanced_cross_entropy, total_loss)
from .mixing import Mixer
from .models import GLMCNet, NetworkSpec, save_checkpoint
from .pipeline import BatchStream, Normalization
from .rebalance import alpha as cumulative_alpha, class_weights
from .samplers import Sampler, SamplerConfig
from .sources import load_source

log = logging.getLogger(__name__)

EPOCH_COLUMNS = ["epoch", "alpha", "lr", "l_c", "l_cb", "l_sim", "total",
                 "eval_top1", "many", "med", "few"]
STEP_COLUMNS = ["epoch", "step", "l_c", "l_cb", "l_sim", "alpha", "total"]


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, step, value):
        super().__init__(f"non-finite total loss {value} at epoch {epoch}, step {step}")
        self.epoch, self.step = epoch, step


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    alpha: float = 1.0
    lr: float = 0.0
    running: dict = field(default_factory=dict)
    best_top1: float = -1.0
    best_epoch: int = -1


@dataclass
class TrainResult:
    network: GLMCNet
    normalization: Normalization
    config: ExperimentConfig
    train_set: ltd.LabeledDataset
    epochs: list
    steps: list
    report: Optional[EvalReport] = None
    run_dir: Optional[str] = None

    @property
    def head_mode(self):
        return head_mode_for(self.config)


def cosine_lr(initial_lr: float, epoch: int, t_max: int) -> float:
    return initial_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / t_max))


def head_mode_for(config: ExperimentConfig) -> str:
    # the baseline never trains the rebalanced head
    return "balanced" if config.train.method == "ce" else config.model.head_mode


def prepare_data(config: ExperimentConfig):
    """Long-tailed training subset and balanced test split described by ``config.data``."""
    d = config.data
    if d.manifest:
        manifest, ids = ltd.read_manifest(d.manifest)
        source = load_source(manifest.source, "train")
        train_set = ltd.subset_by_ids(source, ids, manifest)
        test_set = load_source(manifest.source, "test")
        return train_set, test_set
    src = source_description(d)
    balanced = load_source(src, "train")
    max_count = d.max_count or int(balanced.table.counts.min())
    spec = ltd.ImbalanceSpec(balanced.num_classes, max_count, d.imbalance_factor, d.seed)
    train_set = ltd.build_longtail_subset(balanced, spec)
    train_set.manifest.source = dict(balanced.manifest.source, **{
        k: v for k, v in src.items() if k not in balanced.manifest.source})
    test_set = load_source(src, "test")
    return train_set, test_set


def source_description(d) -> dict:
    if d.source == "synthetic":
        s = d.synthetic
        return {"kind": "synthetic", "num_classes": s.num_classes, "per_class": s.per_class,
                "test_per_class": s.test_per_class, "image_size": s.image_size,
                "channels": s.channels, "noise": s.noise, "seed": s.seed}
    if d.source == "npz":
        return {"kind": "npz", "path": d.root}
    return {"kind": d.source, "root": d.root}


def build_network(config: ExperimentConfig, train_set: ltd.LabeledDataset) -> GLMCNet:
    shape = train_set.images.shape
    spec = NetworkSpec(num_classes=train_set.num_classes, encoder_id=config.model.encoder,
                       in_channels=shape[-1], proj_dim=config.model.proj_dim,
                       in_features=int(np.prod(shape[1:])))
    return GLMCNet(spec)


def _to(batch, device, dtype):
    return [t.to(device, dtype) if t.is_floating_point() else t.to(device) for t in batch]


def _write_csv(path, columns, rows, append):
    new = not (append and os.path.exists(path))
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerows(rows)


def train(config: ExperimentConfig, train_set=None, test_set=None, run_dir=None,
          log_steps=True) -> TrainResult:
    return _fit(config, "glmc", train_set, test_set, run_dir, log_steps)


def train_baseline_ce(config: ExperimentConfig, train_set=None, test_set=None, run_dir=None,
                      log_steps=True) -> TrainResult:
    return _fit(config, "ce", train_set, test_set, run_dir, log_steps)


def _fit(config, method, train_set, test_set, run_dir, log_steps):
    cfg = config.resolved()
    cfg.train.method = method
    if train_set is None:
        train_set, loaded_test = prepare_data(cfg)
        test_set = test_set if test_set is not None else loaded_test
    tc = cfg.train
    num_classes = train_set.num_classes
    table = train_set.table
    head_mode = head_mode_for(cfg)

    dtype = getattr(torch, tc.dtype)
    torch.manual_seed(tc.seed)
    net = build_network(cfg, train_set).to(tc.device, dtype)
    weights = class_weights(table, cfg.rebalance.reweight_k)
    ds = train_set.with_class_weights(weights)
    normalize = Normalization.from_images(ds.images)

    seed = cfg.sampler.seed
    uniform = BatchStream(Sampler(ds, SamplerConfig("uniform", seed=seed)), normalize,
                          tc.augment, seed=[seed, 1], prefetch=tc.prefetch)
    reverse = None
    mixer = None
    if method == "glmc":
        rs = Sampler(ds, SamplerConfig("reversed", cfg.sampler.resample_k, seed=seed + 7919))
        reverse = BatchStream(rs, normalize, tc.augment, seed=[seed, 2], prefetch=tc.prefetch)
        mixer = Mixer(cfg.mix, num_classes)

    opt = torch.optim.SGD(net.parameters(), lr=tc.lr, momentum=tc.momentum,
                          weight_decay=tc.weight_decay)
    steps_per_epoch = tc.steps_per_epoch or math.ceil(len(ds) / tc.batch_size)

    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        dump_config(cfg, os.path.join(run_dir, "config.yaml"))
        ltd.write_manifest(run_dir, train_set)
        for name in ("metrics.csv", "steps.csv"):
            if os.path.exists(os.path.join(run_dir, name)):
                os.remove(os.path.join(run_dir, name))

    state = TrainState()
    epoch_rows, step_rows = [], []
    report = None
    extra = {"config": cfg.to_dict(), "normalization": vars(normalize),
             "train_counts": table.counts.tolist(), "method": method, "head_mode": head_mode}

    for epoch in range(tc.epochs):
        state.epoch = epoch
        state.alpha = cumulative_alpha(epoch, tc.epochs) if method == "glmc" else 1.0
        state.lr = cosine_lr(tc.lr, epoch, tc.epochs)
        for g in opt.param_groups:
            g["lr"] = state.lr
        net.train()
        sums = {"l_c": 0.0, "l_cb": 0.0, "l_sim": 0.0, "total": 0.0}
        u_iter = uniform.take(steps_per_epoch, tc.batch_size)
        r_iter = reverse.take(steps_per_epoch, tc.batch_size) if reverse else None
        rows = []
        for step in range(steps_per_epoch):
            state.step = step
            u = _to(next(u_iter), tc.device, dtype)
            if method == "glmc":
                r = _to(next(r_iter), tc.device, dtype)
                bd = glmc_step_loss(net, mixer(u, r), state.alpha, cfg.rebalance.gamma)
            else:
                bd = ce_step_loss(net, u, num_classes)
            if not torch.isfinite(bd.total):
                raise TrainingDiverged(epoch, step, float(bd.total.detach()))
            opt.zero_grad()
            bd.total.backward()
            opt.step()
            row = {"epoch": epoch, "step": step, **bd.as_floats()}
            rows.append(row)
            for k in sums:
                sums[k] += row[k]
        state.running = {k: v / steps_per_epoch for k, v in sums.items()}
        net.epochs_trained += 1
        if log_steps:
            step_rows.extend(rows)

        erow = {"epoch": epoch, "alpha": state.alpha, "lr": state.lr, **state.running,
                "eval_top1": None, "many": None, "med": None, "few": None}
        last = epoch == tc.epochs - 1
        if test_set is not None and ((epoch + 1) % tc.eval_every == 0 or last):
            report = evaluate(net, test_set, table, normalize, head_mode)
            erow.update(eval_top1=report.top1_overall, many=report.top1_many,
                        med=report.top1_medium, few=report.top1_few)
            if report.top1_overall > state.best_top1:
                state.best_top1, state.best_epoch = report.top1_overall, epoch
                if run_dir:
                    save_checkpoint(os.path.join(run_dir, "checkpoint_best.pt"), net,
                                    epoch + 1, **extra)
        epoch_rows.append(erow)
        log.info("epoch %d/%d alpha=%.4f lr=%.5f loss=%.4f top1=%s", epoch + 1, tc.epochs,
                 state.alpha, state.lr, state.running["total"], erow["eval_top1"])
        if run_dir:
            _write_csv(os.path.join(run_dir, "metrics.csv"), EPOCH_COLUMNS, [erow], append=True)
            if log_steps:
                _write_csv(os.path.join(run_dir, "steps.csv"), STEP_COLUMNS, rows, append=True)
            save_checkpoint(os.path.join(run_dir, "checkpoint_last.pt"), net, epoch + 1, **extra)

    net.eval()
    if run_dir and report is not None:
        report.save(os.path.join(run_dir, "eval_report.json"))
    return TrainResult(net, normalize, cfg, ds, epoch_rows, step_rows, report, run_dir)


def glmc_step_loss(net, mb, alpha: float, gamma: float) -> LossBreakdown:
    bundle, z = net.forward_views(mb.x_global, mb.x_local)
    p_local, w_local = mb.local_targets
    l_c = mixed_cross_entropy(z.c_g, z.c_l, mb.p_mixed, p_local)
    l_cb = rebalanced_cross_entropy(z.cb_g, z.cb_l, mb.p_mixed, mb.w_mixed, p_local, w_local)
    l_sim = consistency_loss(bundle)
    return total_loss(l_c, l_cb, l_sim, alpha, gamma)


def ce_step_loss(net, batch, num_classes) -> LossBreakdown:
    x, y, _ = batch
    logits = net.classifier(net.encoder(x))
    p = torch.nn.functional.one_hot(y, num_classes).to(logits.dtype)
    l_c = -(p * torch.log_softmax(logits, dim=1)).sum(dim=1).mean()
    zero = torch.zeros((), dtype=l_c.dtype)
    return LossBreakdown(l_c, zero, zero, 1.0, 0.0, l_c)
