"""Saliency-gated skip-connection blurring.

The mask pipeline: guided backprop on the frozen age classifier, average over
RGB and take the absolute value, Gaussian-smooth, then normalize by twice the
per-image standard deviation over locations and clip to [0, 1]. The mask then
interpolates, per pixel, between a local blur (sigma_m, inside the mask) and a
global blur (sigma_g, everywhere) applied to the skip feature map.
"""

from __future__ import annotations

import contextlib
import io
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .blocks import GaussianKernel, blur2d, gaussian_kernel
from .errors import ContractError

DEGENERATE_STD = 1e-12


@dataclass
class BlurParams:
    """User-facing structure-preservation knobs: local and global blur widths."""

    sigma_m: float
    sigma_g: float

    def validate(self, sigma_max: float = 9.0):
        for name, v in (("sigma_m", self.sigma_m), ("sigma_g", self.sigma_g)):
            if not 0 <= v <= sigma_max:
                raise ContractError(f"{name}={v} outside [0, {sigma_max}]")
        return self


@dataclass
class SaliencyMask:
    """Mask in [0, 1] plus the normalization statistic it was built with."""

    values: torch.Tensor  # (B, 1, H, W)
    sigma_stat: torch.Tensor  # (B,)


def _gb_relu_hook(module, grad_input, grad_output):
    # zero backward flow where either the forward activation or the incoming
    # gradient is negative; grad_input already carries the forward gate
    return (torch.clamp(grad_input[0], min=0),)


@contextlib.contextmanager
def _guided_relu(model: nn.Module):
    handles = [
        m.register_full_backward_hook(_gb_relu_hook)
        for m in model.modules()
        if isinstance(m, nn.ReLU)
    ]
    try:
        yield
    finally:
        for h in handles:
            h.remove()


def guided_backprop(classifier: nn.Module, x: torch.Tensor, top_class_only=False) -> torch.Tensor:
    """Input-space guided-backprop saliency of the classifier's summed logits.

    With top_class_only the target is each sample's highest logit instead of
    the class-independent sum. Returns a tensor shaped like x.
    """
    if x.ndim != 4:
        raise ContractError(f"x must be NCHW, got {x.ndim}-D")
    x = x.detach().requires_grad_(True)
    with _guided_relu(classifier), torch.enable_grad():
        logits = classifier(x)
        if top_class_only:
            target = logits.gather(1, logits.argmax(dim=1, keepdim=True)).sum()
        else:
            target = logits.sum()
        try:
            grad = torch.autograd.grad(target, x)[0]
        except RuntimeError as e:
            raise ContractError(
                "classifier has no differentiable path to its input"
            ) from e
    return grad.detach()


def mask_from_saliency(b: torch.Tensor, blur_sigma: float = 3.0) -> SaliencyMask:
    """Turn a raw saliency tensor (B, 3, H, W) into a [0, 1] mask.

    smoothed = gauss(|mean over RGB|); mask = min(smoothed / (2 * std), 1)
    with the std taken per image over locations. An all-flat saliency map
    (std below 1e-12) yields an all-zero mask.
    """
    if b.ndim != 4:
        raise ContractError(f"saliency must be NCHW, got {b.ndim}-D")
    if not torch.isfinite(b).all():
        raise ContractError("saliency contains non-finite values")
    smoothed = b.mean(dim=1, keepdim=True).abs()
    smoothed = blur2d(smoothed, gaussian_kernel(blur_sigma))
    std = smoothed.flatten(1).std(dim=1, unbiased=False)
    denom = torch.where(std < DEGENERATE_STD, torch.ones_like(std), 2 * std)
    mask = torch.clamp(smoothed / denom[:, None, None, None], max=1.0)
    mask = torch.where(
        (std < DEGENERATE_STD)[:, None, None, None], torch.zeros_like(mask), mask
    )
    return SaliencyMask(values=mask, sigma_stat=std)


def resize_mask(m: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Bilinear mask resize, clamped back to [0, 1]."""
    if m.ndim != 4:
        raise ContractError(f"mask must be (B,1,H,W), got {m.ndim}-D")
    if m.shape[-2:] == (h, w):
        return m
    out = F.interpolate(m, size=(h, w), mode="bilinear", align_corners=False)
    return out.clamp(0.0, 1.0)


def blur_skip(
    f: torch.Tensor,
    m: torch.Tensor,
    p: BlurParams,
    kernels: tuple[GaussianKernel, GaussianKernel] | None = None,
) -> torch.Tensor:
    """Masked dual blur of a skip feature map.

    out = m * (f conv k_m) + (1 - m) * (f conv k_g), broadcast over channels.
    """
    if f.ndim != 4 or m.ndim != 4:
        raise ContractError("feature map and mask must be NCHW")
    if f.shape[-2:] != m.shape[-2:] or f.shape[0] != m.shape[0]:
        raise ContractError(
            f"mask {tuple(m.shape)} does not match features {tuple(f.shape)}"
        )
    k_m, k_g = kernels if kernels is not None else (
        gaussian_kernel(p.sigma_m),
        gaussian_kernel(p.sigma_g),
    )
    if p.sigma_m == p.sigma_g:
        return blur2d(f, k_m)
    return m * blur2d(f, k_m) + (1 - m) * blur2d(f, k_g)


def _mask_to_pil(mask: torch.Tensor) -> Image.Image:
    arr = mask.detach().cpu().squeeze()
    if arr.ndim != 2:
        raise ContractError(f"expected a single-image mask, got shape {tuple(mask.shape)}")
    img = np.rint(arr.numpy() * 255).clip(0, 255).astype(np.uint8)
    return Image.fromarray(img, mode="L")


def mask_to_png(mask: torch.Tensor, path):
    """Export a single mask (1,H,W) or (B,1,H,W with B=1) as 8-bit grayscale."""
    _mask_to_pil(mask).save(path)


def mask_png_bytes(mask: torch.Tensor) -> bytes:
    buf = io.BytesIO()
    _mask_to_pil(mask).save(buf, format="PNG")
    return buf.getvalue()
