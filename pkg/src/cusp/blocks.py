"""Low-level differentiable building blocks.

Everything here operates on NCHW float tensors. The modulated convolution
follows the weight-demodulation formulation: the per-input-channel modulation
vector scales the kernel, and demodulation rescales each output filter to
unit norm so that unit-variance activations stay unit-variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError


# ---------------------------------------------------------------------------
# Modulated convolution (functional contract)
# ---------------------------------------------------------------------------

@dataclass
class ModulatedConvParams:
    """Weights plus a single modulation vector for the functional path.

    weights: (out_ch, in_ch, k, k), k odd.
    modulation_vector: (in_ch,) per-input-channel scale.
    """

    weights: torch.Tensor
    modulation_vector: torch.Tensor
    demodulate: bool = True
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ContractError(f"weights must be 4-D, got {self.weights.ndim}-D")
        out_ch, in_ch, kh, kw = self.weights.shape
        if min(out_ch, in_ch, kh, kw) < 1:
            raise ContractError(f"degenerate weight shape {tuple(self.weights.shape)}")
        if kh != kw or kh % 2 == 0:
            raise ContractError(f"kernel must be square with odd size, got {kh}x{kw}")
        if self.modulation_vector.ndim != 1 or self.modulation_vector.shape[0] != in_ch:
            raise ContractError(
                f"modulation_vector has {tuple(self.modulation_vector.shape)}, "
                f"expected ({in_ch},)"
            )
        if not self.epsilon > 0:
            raise ContractError("epsilon must be > 0")


def modulate_weights(weights, modulation, demodulate, epsilon=1e-8):
    """Scale kernels per input channel; optionally rescale each output filter
    to unit norm. `modulation` is (in_ch,) or batched (B, in_ch)."""
    if modulation.ndim == 1:
        w = weights * modulation[None, :, None, None]
        if demodulate:
            norm = torch.rsqrt(w.pow(2).sum(dim=(1, 2, 3), keepdim=True) + epsilon)
            w = w * norm
        return w
    # batched: (B, out, in, k, k)
    w = weights[None] * modulation[:, None, :, None, None]
    if demodulate:
        norm = torch.rsqrt(w.pow(2).sum(dim=(2, 3, 4), keepdim=True) + epsilon)
        w = w * norm
    return w


def modulated_conv(x: torch.Tensor, p: ModulatedConvParams) -> torch.Tensor:
    """Same-padding convolution with modulated (and optionally demodulated)
    weights; spatial size is preserved."""
    if x.ndim != 4:
        raise ContractError(f"x must be NCHW, got {x.ndim}-D")
    if x.shape[1] != p.weights.shape[1]:
        raise ContractError(
            f"x has {x.shape[1]} channels, weights expect {p.weights.shape[1]}"
        )
    if not torch.isfinite(x).all():
        raise ContractError("x contains non-finite values")
    w = modulate_weights(p.weights, p.modulation_vector, p.demodulate, p.epsilon)
    return F.conv2d(x, w, padding=p.weights.shape[-1] // 2)


class ModulatedConv2d(nn.Module):
    """Conv layer whose kernel is modulated per sample by an affine projection
    of a conditioning vector (style or age embedding)."""

    def __init__(self, in_ch, out_ch, kernel_size, cond_dim, demodulate=True):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ContractError("kernel_size must be odd")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel_size = kernel_size
        self.demodulate = demodulate
        self.eps = 1e-8
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel_size, kernel_size))
        if not demodulate:
            # no demodulation to absorb the scale, so keep the init tame
            self.weight.data.mul_(1.0 / math.sqrt(in_ch * kernel_size * kernel_size))
        self.affine = nn.Linear(cond_dim, in_ch)
        nn.init.ones_(self.affine.bias)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, cond):
        b, c, h, w_ = x.shape
        if c != self.in_ch:
            raise ContractError(f"expected {self.in_ch} channels, got {c}")
        mod = self.affine(cond)  # (B, in_ch)
        weight = modulate_weights(self.weight, mod, self.demodulate, self.eps)
        # grouped conv applies each sample's own kernel
        out = F.conv2d(
            x.reshape(1, b * c, h, w_),
            weight.reshape(b * self.out_ch, c, self.kernel_size, self.kernel_size),
            padding=self.kernel_size // 2,
            groups=b,
        )
        out = out.reshape(b, self.out_ch, h, w_)
        return out + self.bias[None, :, None, None]


# ---------------------------------------------------------------------------
# Gaussian kernels and separable blur
# ---------------------------------------------------------------------------

@dataclass
class GaussianKernel:
    """1-D normalized Gaussian taps; sigma is the standard deviation."""

    sigma: float
    taps: torch.Tensor = field(repr=False)

    @property
    def radius(self) -> int:
        return (self.taps.shape[0] - 1) // 2


def gaussian_kernel(sigma: float) -> GaussianKernel:
    """Truncated (radius = ceil(3*sigma)) normalized Gaussian; sigma = 0 is
    the single-tap identity."""
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma * sigma == 0.0:  # includes subnormals whose square underflows
        return GaussianKernel(sigma=0.0, taps=torch.ones(1, dtype=torch.float32))
    radius = math.ceil(3 * sigma)
    i = torch.arange(-radius, radius + 1, dtype=torch.float64)
    taps = torch.exp(-(i * i) / (2 * sigma * sigma))
    taps = taps / taps.sum()
    return GaussianKernel(sigma=float(sigma), taps=taps.to(torch.float32))


def _reflect_indices(n: int, radius: int, device) -> torch.Tensor:
    """Indices implementing mirror (no edge repeat) padding; works for any n,
    including n smaller than the pad width."""
    idx = torch.arange(-radius, n + radius, device=device)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = idx.remainder(period).abs()
    return torch.minimum(idx, period - idx)


def blur2d(x: torch.Tensor, kernel: GaussianKernel) -> torch.Tensor:
    """Separable Gaussian blur with reflect boundary handling."""
    if x.ndim != 4:
        raise ContractError(f"x must be NCHW, got {x.ndim}-D")
    r = kernel.radius
    if r == 0:
        return x
    taps = kernel.taps.to(x.dtype)
    b, c, h, w = x.shape
    # horizontal pass
    cols = _reflect_indices(w, r, x.device)
    out = F.conv2d(
        x[:, :, :, cols],
        taps.reshape(1, 1, 1, -1).expand(c, 1, 1, -1),
        groups=c,
    )
    # vertical pass
    rows = _reflect_indices(h, r, x.device)
    out = F.conv2d(
        out[:, :, rows, :],
        taps.reshape(1, 1, -1, 1).expand(c, 1, -1, 1),
        groups=c,
    )
    return out


def upsample_bilinear(x: torch.Tensor) -> torch.Tensor:
    """2x bilinear upsampling (half-pixel centers)."""
    if x.ndim != 4:
        raise ContractError(f"x must be NCHW, got {x.ndim}-D")
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


# ---------------------------------------------------------------------------
# Noise injection and per-resolution image heads
# ---------------------------------------------------------------------------

class NoiseInjection(nn.Module):
    """Adds 0-centered spatial noise scaled by a learned per-layer strength.

    Pass a torch.Generator to make the injected noise reproducible.
    """

    def __init__(self):
        super().__init__()
        self.strength = nn.Parameter(torch.zeros(1))

    def forward(self, x, generator: torch.Generator | None = None):
        b, _, h, w = x.shape
        noise = torch.randn(b, 1, h, w, generator=generator, dtype=x.dtype, device=x.device)
        return x + self.strength * noise


class ToRGB(nn.Module):
    """1x1 modulated conv (no demodulation) projecting features to a 3-channel
    image contribution at the block's resolution."""

    def __init__(self, in_ch, cond_dim):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, 3, 1, cond_dim, demodulate=False)

    def forward(self, x, cond):
        return self.conv(x, cond)
