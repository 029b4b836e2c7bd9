from __future__ import annotations

import torch


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean over windows of the squared Frobenius residual norm."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.dim() == 2:
        x, x_hat = x[None], x_hat[None]
    return ((x - x_hat) ** 2).sum(dim=(-2, -1)).mean()


def entropy_loss(w: torch.Tensor) -> torch.Tensor:
    """Mean over windows of the summed read-weight entropy (natural log, 0 log 0 = 0)."""
    if (w < 0).any():
        raise ValueError("read weights must be nonnegative")
    if w.dim() == 2:
        w = w[None]
    # double where keeps the gradient finite at w == 0
    pos = w > 0
    safe = torch.where(pos, w, torch.ones_like(w))
    plogp = torch.where(pos, w * torch.log(safe), torch.zeros_like(w))
    return (-plogp).sum(dim=(-2, -1)).mean()


def total_loss(rec, entr, lambda_: float):
    return rec + lambda_ * entr
