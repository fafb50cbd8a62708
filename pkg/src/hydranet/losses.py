"""Imbalance-aware task losses and their uncertainty-weighted combination.

Classification heads use a focal loss, regression heads a shrinkage loss; the
six per-task means are folded into one scalar with learned log-variance
weights. All three functions are plain tensor ops, so they run in float32
during training and float64 inside the gradient-check oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .ingest import ValidationError

HEAD_NAMES = ("reg_sb", "reg_ns", "reg_os", "cls_sb", "cls_ns", "cls_os")


@dataclass(frozen=True)
class LossConfig:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    shrink_a: float = 10.0
    shrink_c: float = 0.2
    shrink_weighted: bool = False
    eps: float = 1e-7

    def __post_init__(self):
        if not 0.0 < self.focal_alpha < 1.0:
            raise ValidationError(f"focal_alpha must be in (0,1), got {self.focal_alpha}")
        if self.focal_gamma < 0.0:
            raise ValidationError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if self.shrink_a <= 0.0 or self.shrink_c <= 0.0:
            raise ValidationError("shrink_a and shrink_c must be positive")
        if not 0.0 < self.eps < 0.5:
            raise ValidationError(f"eps must be a small positive clamp, got {self.eps}")


class TaskLogVariances(nn.Module):
    """Learned log-variance per head, ordered as HEAD_NAMES."""

    def __init__(self):
        super().__init__()
        self.s = nn.Parameter(torch.zeros(len(HEAD_NAMES)))


def focal_loss(p: Tensor, y: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean focal loss of predicted probabilities against binary targets.

    Elementwise: -alpha*y*(1-p)^gamma*log(p) - (1-alpha)*(1-y)*p^gamma*log(1-p),
    with p clamped to [eps, 1-eps] so the logs stay finite.
    """
    if p.shape != y.shape:
        raise ValidationError(f"shape mismatch: p {tuple(p.shape)} vs y {tuple(y.shape)}")
    y = y.to(p.dtype)
    pc = p.clamp(cfg.eps, 1.0 - cfg.eps)
    pos = -cfg.focal_alpha * y * (1.0 - pc) ** cfg.focal_gamma * torch.log(pc)
    neg = -(1.0 - cfg.focal_alpha) * (1.0 - y) * pc**cfg.focal_gamma * torch.log(1.0 - pc)
    return (pos + neg).mean()


def shrinkage_loss(y_hat: Tensor, y: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean shrinkage loss: l^2 / (1 + exp(a*(c - l))) with l = |y - y_hat|.

    Small residuals (l << c) are shrunk toward zero weight; large residuals
    approach plain squared error. With ``shrink_weighted`` each cell is
    additionally scaled by exp(target), emphasizing high-magnitude cells
    (weight 1 wherever the target is zero).
    """
    if y_hat.shape != y.shape:
        raise ValidationError(f"shape mismatch: y_hat {tuple(y_hat.shape)} vs y {tuple(y.shape)}")
    if not (torch.isfinite(y_hat).all() and torch.isfinite(y).all()):
        raise ValidationError("shrinkage_loss inputs must be finite")
    y = y.to(y_hat.dtype)
    l = (y - y_hat).abs()
    cellwise = l**2 / (1.0 + torch.exp(cfg.shrink_a * (cfg.shrink_c - l)))
    if cfg.shrink_weighted:
        cellwise = cellwise * torch.exp(y)
    return cellwise.mean()


def multitask_combine(task_losses: Tensor, logvars: Tensor) -> Tensor:
    """Unified loss: sum_i exp(-s_i) * L_i + s_i, differentiable in both arguments."""
    task_losses = torch.as_tensor(task_losses) if not torch.is_tensor(task_losses) else task_losses
    logvars = torch.as_tensor(logvars) if not torch.is_tensor(logvars) else logvars
    if task_losses.shape != logvars.shape or task_losses.ndim != 1:
        raise ValidationError(
            f"need matching 1-D vectors, got {tuple(task_losses.shape)} and {tuple(logvars.shape)}"
        )
    if not torch.isfinite(task_losses).all():
        raise ValidationError("task losses must be finite")
    if not torch.isfinite(logvars).all():
        raise ValidationError("log-variances must be finite")
    return (torch.exp(-logvars) * task_losses + logvars).sum()
