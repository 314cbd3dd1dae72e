"""Loss terms: view consistency with stop-gradient, mixed and rebalanced CE, composition."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .models import RepresentationBundle


@dataclass
class LossBreakdown:
    l_c: torch.Tensor
    l_cb: torch.Tensor
    l_sim: torch.Tensor
    alpha: float
    gamma: float
    total: torch.Tensor

    def as_floats(self) -> dict:
        vals = {k: float(torch.as_tensor(getattr(self, k)).detach())
                for k in ("l_c", "l_cb", "l_sim", "total")}
        return {**vals, "alpha": float(self.alpha)}


def negative_cosine(u: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """Row-wise ``-(u/|u|) . (h/|h|)``; 1-d inputs give a scalar."""
    if u.shape != h.shape:
        raise ValueError(f"shape mismatch: {tuple(u.shape)} vs {tuple(h.shape)}")
    nu = u.norm(dim=-1)
    nh = h.norm(dim=-1)
    if bool((nu == 0).any()) or bool((nh == 0).any()):
        raise ValueError("zero-norm representation; cosine similarity is undefined")
    return -(u * h).sum(dim=-1) / (nu * nh)


def consistency_loss(bundle: RepresentationBundle) -> torch.Tensor:
    """Batch mean of ``sim(u_g, sg(h_l)) + sim(u_l, sg(h_g))``, in [-2, 2]."""
    per_row = (negative_cosine(bundle.u_g, bundle.h_l.detach())
               + negative_cosine(bundle.u_l, bundle.h_g.detach()))
    return per_row.mean()


def _soft_ce(logits, target):
    if torch.isnan(logits).any():
        raise ValueError("NaN logits")
    return -(target * F.log_softmax(logits, dim=1)).sum(dim=1)


def mixed_cross_entropy(logits_g, logits_l, p_mixed, p_local=None) -> torch.Tensor:
    """Mean soft-label cross-entropy over all 2N rows of the two views."""
    p_local = p_mixed if p_local is None else p_local
    return torch.cat([_soft_ce(logits_g, p_mixed), _soft_ce(logits_l, p_local)]).mean()


def rebalanced_cross_entropy(logits_g, logits_l, p_mixed, w_mixed,
                             p_local=None, w_local=None) -> torch.Tensor:
    """As :func:`mixed_cross_entropy` with each row scaled by its mixed weight."""
    p_local = p_mixed if p_local is None else p_local
    w_local = w_mixed if w_local is None else w_local
    if bool((w_mixed < 0).any()) or bool((w_local < 0).any()):
        raise ValueError("sample weights must be non-negative")
    rows = torch.cat([w_mixed * _soft_ce(logits_g, p_mixed),
                      w_local * _soft_ce(logits_l, p_local)])
    return rows.mean()


def total_loss(l_c, l_cb, l_sim, alpha: float, gamma: float) -> LossBreakdown:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    total = alpha * l_c + (1 - alpha) * l_cb + gamma * l_sim
    return LossBreakdown(l_c, l_cb, l_sim, alpha, gamma, total)
