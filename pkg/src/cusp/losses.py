"""Training losses: L1 reconstruction/cycle terms, the mean-variance age
classification loss, hinge adversarial losses, and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ContractError


@dataclass
class LossWeights:
    lambda_r: float = 10.0
    lambda_c: float = 0.06
    lambda_d: float = 1.0
    lambda_cy: float = 10.0

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_c, self.lambda_d, self.lambda_cy) < 0:
            raise ContractError("loss weights must be >= 0")


@dataclass
class MeanVarianceParams:
    lambda_mean: float = 0.2
    lambda_var: float = 0.05

    def __post_init__(self):
        if self.lambda_mean < 0 or self.lambda_var < 0:
            raise ContractError("mean-variance weights must be >= 0")


def recon_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference."""
    if x.shape != x_hat.shape:
        raise ContractError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).abs().mean()


def cycle_loss(x: torch.Tensor, x_cycled: torch.Tensor) -> torch.Tensor:
    """L1 between the input and its round trip through two translations."""
    return recon_loss(x, x_cycled)


def mean_variance_loss(
    logits: torch.Tensor,
    y: torch.Tensor | int,
    params: MeanVarianceParams | None = None,
) -> torch.Tensor:
    """Cross entropy plus penalties on the softmax distribution's mean error
    and variance over class indices.

    loss = CE + lambda_mean * 0.5 * (m - y)^2 + lambda_var * v
    with m = sum_j p_j * j and v = sum_j p_j * (j - m)^2.
    """
    params = params or MeanVarianceParams()
    squeeze = logits.ndim == 1
    if squeeze:
        logits = logits[None]
    y = torch.as_tensor(y, device=logits.device).reshape(-1).long()
    n = logits.shape[-1]
    if ((y < 0) | (y >= n)).any():
        raise ContractError(f"class index out of range [0, {n})")
    p = F.softmax(logits, dim=-1)
    j = torch.arange(n, dtype=logits.dtype, device=logits.device)
    m = (p * j).sum(dim=-1)
    v = (p * (j[None] - m[:, None]) ** 2).sum(dim=-1)
    ce = F.cross_entropy(logits, y, reduction="none")
    loss = ce + params.lambda_mean * 0.5 * (m - y.to(logits.dtype)) ** 2 + params.lambda_var * v
    return loss.mean() if not squeeze else loss[0]


def adversarial_losses(d_real: torch.Tensor, d_fake: torch.Tensor):
    """Hinge adversarial losses.

    loss_D = mean(max(0, 1 - d_real)) + mean(max(0, 1 + d_fake))
    loss_G = -mean(d_fake)
    """
    loss_d = F.relu(1 - d_real).mean() + F.relu(1 + d_fake).mean()
    loss_g = -d_fake.mean()
    return loss_d, loss_g


def total_objective(parts, w: LossWeights) -> torch.Tensor:
    """Generator-side weighted sum; parts = (L_r, L_C, L_D^G, L_cy)."""
    l_r, l_c, l_d, l_cy = parts
    return w.lambda_r * l_r + w.lambda_c * l_c + w.lambda_d * l_d + w.lambda_cy * l_cy
