"""Encoder + projection + predictor + two bias-free classifier heads.

Encoders come from a registry keyed by ``encoder_id`` so deeper residual nets
can be added without touching the training loop.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_VERSION = 1

ENCODERS: dict[str, Callable[..., nn.Module]] = {}


def register_encoder(name):
    def deco(fn):
        ENCODERS[name] = fn
        return fn
    return deco


class BasicBlock(nn.Module):
    def __init__(self, in_planes, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.pad = planes - in_planes
        self.stride = stride

    def shortcut(self, x):
        # parameter-free shortcut: subsample and zero-pad channels
        if self.stride == 1 and self.pad == 0:
            return x
        x = x[:, :, ::self.stride, ::self.stride]
        return F.pad(x, (0, 0, 0, 0, self.pad // 2, self.pad - self.pad // 2))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class CifarResNet(nn.Module):
    """6n+2 layer residual net for 32x32 inputs; widths 16/32/64."""

    def __init__(self, depth=32, in_channels=3, base_width=16):
        super().__init__()
        if (depth - 2) % 6:
            raise ValueError(f"depth must be 6n+2, got {depth}")
        n = (depth - 2) // 6
        widths = [base_width, base_width * 2, base_width * 4]
        self.conv1 = nn.Conv2d(in_channels, widths[0], 3, 1, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(widths[0])
        layers, in_planes = [], widths[0]
        for i, planes in enumerate(widths):
            for b in range(n):
                layers.append(BasicBlock(in_planes, planes, 2 if (i > 0 and b == 0) else 1))
                in_planes = planes
        self.layers = nn.Sequential(*layers)
        self.out_dim = widths[-1]
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = self.layers(x)
        return F.adaptive_avg_pool2d(x, 1).flatten(1)


class FlattenEncoder(nn.Module):
    """Identity feature map over flattened inputs; for toy and feature-level setups."""

    def __init__(self, in_features):
        super().__init__()
        self.out_dim = in_features

    def forward(self, x):
        return x.flatten(1)


@register_encoder("resnet32")
def resnet32(in_channels=3, **_):
    return CifarResNet(32, in_channels)


@register_encoder("resnet20")
def resnet20(in_channels=3, **_):
    return CifarResNet(20, in_channels)


@register_encoder("resnet8")
def resnet8(in_channels=3, **_):
    return CifarResNet(8, in_channels, base_width=8)


@register_encoder("flatten")
def flatten(in_features=None, **_):
    if in_features is None:
        raise ValueError("the flatten encoder needs in_features")
    return FlattenEncoder(in_features)


@dataclass(frozen=True)
class NetworkSpec:
    num_classes: int
    encoder_id: str = "resnet32"
    in_channels: int = 3
    feature_dim: Optional[int] = None
    proj_dim: Optional[int] = None
    # only read by encoders that need it (``flatten``)
    in_features: Optional[int] = None


class RepresentationBundle(NamedTuple):
    r_g: torch.Tensor
    r_l: torch.Tensor
    h_g: torch.Tensor
    h_l: torch.Tensor
    u_g: torch.Tensor
    u_l: torch.Tensor


class ViewLogits(NamedTuple):
    c_g: torch.Tensor
    c_l: torch.Tensor
    cb_g: torch.Tensor
    cb_l: torch.Tensor


class GLMCNet(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.encoder_id not in ENCODERS:
            raise KeyError(f"unknown encoder {spec.encoder_id!r}; known: {sorted(ENCODERS)}")
        encoder = ENCODERS[spec.encoder_id](in_channels=spec.in_channels,
                                            in_features=spec.in_features)
        feature_dim = encoder.out_dim
        if spec.feature_dim is not None and spec.feature_dim != feature_dim:
            raise ValueError(f"{spec.encoder_id} produces {feature_dim} features, "
                             f"spec says {spec.feature_dim}")
        proj_dim = spec.proj_dim or max(1, feature_dim // 2)
        if not proj_dim < feature_dim:
            raise ValueError(f"proj_dim ({proj_dim}) must be below feature_dim ({feature_dim})")
        self.spec = NetworkSpec(**{**asdict(spec), "feature_dim": feature_dim,
                                   "proj_dim": proj_dim})
        self.encoder = encoder
        self.projection = nn.Linear(feature_dim, proj_dim)
        self.predictor = nn.Linear(proj_dim, proj_dim)
        self.classifier = nn.Linear(feature_dim, spec.num_classes, bias=False)
        self.rebalanced_classifier = nn.Linear(feature_dim, spec.num_classes, bias=False)
        self.register_buffer("epochs_trained", torch.zeros((), dtype=torch.long))

    def heads(self):
        return {"projection": self.projection, "predictor": self.predictor}

    def forward_views(self, x_global, x_local):
        """Encode both views in one pass (batch norm sees all 2N rows)."""
        if x_global.shape[0] != x_local.shape[0]:
            raise ValueError("both views need the same batch size")
        n = x_global.shape[0]
        r = self.encoder(torch.cat([x_global, x_local]))
        h = self.projection(r)
        u = self.predictor(h)
        zc = self.classifier(r)
        zcb = self.rebalanced_classifier(r)
        bundle = RepresentationBundle(r[:n], r[n:], h[:n], h[n:], u[:n], u[n:])
        return bundle, ViewLogits(zc[:n], zc[n:], zcb[:n], zcb[n:])

    def forward(self, x, head="longtail"):
        return self.inference_logits(x, head)

    def inference_logits(self, x, mode="longtail"):
        """Rebalanced head for long-tailed data, conventional head for balanced data."""
        r = self.encoder(x)
        if mode == "longtail":
            return self.rebalanced_classifier(r)
        if mode == "balanced":
            return self.classifier(r)
        raise ValueError(f"head mode must be 'longtail' or 'balanced', got {mode!r}")

    def inference_head(self, mode="longtail") -> nn.Linear:
        return self.rebalanced_classifier if mode == "longtail" else self.classifier


def parameter_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, network: GLMCNet, epoch: int, **extra):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "network_spec": asdict(network.spec),
        "state_dict": network.state_dict(),
        "epoch": int(epoch),
    }
    payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path, map_location="cpu"):
    """Returns ``(network, payload)``."""
    payload = torch.load(path, map_location=map_location, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format {version!r}")
    net = GLMCNet(NetworkSpec(**payload["network_spec"]))
    net.load_state_dict(payload["state_dict"])
    return net, payload
