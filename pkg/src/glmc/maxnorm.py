"""Stage-2 classifier finetuning under a per-class max-norm constraint.

Projected gradient descent: after each update every class weight vector
``theta_k`` is rescaled by ``min(1, delta / |theta_k|)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import torch
import torch.nn.functional as F

from .losses import rebalanced_cross_entropy
from .pipeline import BatchStream, Normalization
from .rebalance import RebalanceConfig, class_weights
from .samplers import Sampler, SamplerConfig


@dataclass
class MaxNormConfig:
    delta: Union[float, str] = "auto"
    epochs: int = 10
    # None -> stage-1 learning rate / 100
    lr: Optional[float] = None
    freeze_encoder: bool = True
    # "iteration" or "epoch"
    project_every: str = "iteration"
    weight_decay: float = 0.0
    momentum: float = 0.9
    batch_size: int = 128

    def __post_init__(self):
        if isinstance(self.delta, str):
            if self.delta != "auto":
                raise ValueError(f"delta must be a positive number or 'auto', got {self.delta!r}")
        elif not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.epochs < 0:
            raise ValueError("finetune epochs must be >= 0")
        if self.project_every not in ("iteration", "epoch"):
            raise ValueError("project_every must be 'iteration' or 'epoch'")


@torch.no_grad()
def project_weights(weight: torch.Tensor, delta: float) -> torch.Tensor:
    """Scale rows whose l2 norm exceeds ``delta`` back onto the ball, in place.

    Rows already inside the ball (and zero rows) are not touched at all.
    """
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    # compare in float64 so a float32 weight never exceeds the exact python delta
    norms = weight.norm(dim=1)
    over = norms.double() > delta
    if not over.any():
        return weight
    rows = weight[over] * (delta / norms[over]).unsqueeze(1)
    # rounding can leave a norm a few ulps above delta; shrink until inside so that
    # a second projection is an exact no-op
    shrink = 1.0 - 4 * torch.finfo(weight.dtype).eps
    while True:
        still = rows.norm(dim=1).double() > delta
        if not still.any():
            break
        rows[still] = rows[still] * shrink
    weight[over] = rows
    return weight


def resolve_delta(weight: torch.Tensor, delta) -> float:
    if delta == "auto":
        return float(weight.detach().norm(dim=1).median())
    return float(delta)


def finetune_classifier(network, dataset, config: MaxNormConfig, rebalance: RebalanceConfig,
                        normalize: Optional[Normalization] = None, head_mode: str = "longtail",
                        stage1_lr: float = 0.01, seed: int = 0, augment: bool = True,
                        on_step: Optional[Callable[[dict], None]] = None):
    """Finetune the inference head with rebalanced CE (cumulative weight fixed at 0)."""
    if int(network.epochs_trained) < 1:
        raise ValueError("finetuning needs a stage-1 trained network (epochs_trained == 0)")
    head = network.inference_head(head_mode)
    delta = resolve_delta(head.weight, config.delta)
    project_weights(head.weight.data, delta)
    if config.epochs == 0:
        return network

    normalize = normalize or Normalization.from_images(dataset.images)
    weights = class_weights(dataset.table, rebalance.reweight_k)
    dataset = dataset.with_class_weights(weights)
    stream = BatchStream(Sampler(dataset, SamplerConfig("uniform", seed=seed)), normalize,
                         augment, seed=[seed, 1])
    params = list(head.parameters())
    if config.freeze_encoder:
        for p in network.parameters():
            p.requires_grad_(False)
        for p in params:
            p.requires_grad_(True)
        network.eval()
    else:
        params = list(network.encoder.parameters()) + params
        network.train()
    lr = config.lr if config.lr is not None else stage1_lr / 100
    opt = torch.optim.SGD(params, lr=lr, momentum=config.momentum,
                          weight_decay=config.weight_decay)
    steps = math.ceil(len(dataset) / config.batch_size)
    num_classes = network.spec.num_classes
    try:
        for epoch in range(config.epochs):
            for step, (x, y, w) in enumerate(stream.take(steps, config.batch_size)):
                x, w = x.to(head.weight.dtype), w.to(head.weight.dtype)
                if config.freeze_encoder:
                    with torch.no_grad():
                        r = network.encoder(x)
                else:
                    r = network.encoder(x)
                logits = head(r)
                p = F.one_hot(y, num_classes).to(logits.dtype)
                loss = rebalanced_cross_entropy(logits, logits, p, w)
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite finetune loss at epoch {epoch} step {step}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                if config.project_every == "iteration":
                    project_weights(head.weight.data, delta)
                if on_step is not None:
                    on_step({"epoch": epoch, "step": step, "loss": float(loss.detach()),
                             "max_norm": float(head.weight.detach().norm(dim=1).max()),
                             "delta": delta})
            if config.project_every == "epoch":
                project_weights(head.weight.data, delta)
    finally:
        for p in network.parameters():
            p.requires_grad_(True)
    network.eval()
    return network

