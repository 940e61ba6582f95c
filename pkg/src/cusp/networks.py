"""The five networks of the editing architecture.

Style encoder (spatial info pooled away), content encoder (spatial info kept,
plus the skip feature map), an 8-layer age MLP, the style-based generator
whose blocks are modulated first by style then by the age embedding, an
age-conditional projection discriminator, and the small conv age classifier
that drives both the saliency mask and the age-matching loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import ModulatedConv2d, NoiseInjection, ToRGB, upsample_bilinear
from .errors import ContractError


@dataclass
class ModelConfig:
    """Shared shape/conditioning configuration for the whole model bundle."""

    resolution: int = 64
    bottleneck: int = 4
    style_dim: int = 256
    age_dim: int = 256
    channel_base: int = 64
    channel_max: int = 512
    age_min: int = 20
    age_max: int = 69
    sigma_max: float = 9.0
    mask_blur_sigma: float = 3.0
    gb_top_class: bool = False
    disc_feat_dim: int = 256
    classifier_channels: tuple = (32, 64, 96, 128)
    classifier_resolution: int = 64
    skip_scale: int | None = None

    def __post_init__(self):
        if self.resolution & (self.resolution - 1):
            raise ContractError("resolution must be a power of two")
        if self.skip_scale is None:
            self.skip_scale = self.resolution // 2
        if self.bottleneck * 2 ** self.n_blocks != self.resolution:
            raise ContractError("bottleneck * 2^n_blocks must equal resolution")

    @property
    def n_blocks(self) -> int:
        return int(math.log2(self.resolution // self.bottleneck))

    @property
    def n_ages(self) -> int:
        return self.age_max - self.age_min + 1

    def channels_at(self, res: int) -> int:
        return min(self.channel_max, self.channel_base * self.resolution // res)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier_channels"] = list(self.classifier_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["classifier_channels"] = tuple(d["classifier_channels"])
        return cls(**d)


def _check_image(x, resolution):
    if x.ndim != 4 or x.shape[1] != 3:
        raise ContractError(f"expected (B,3,H,W) image, got {tuple(x.shape)}")
    if x.shape[-2:] != (resolution, resolution):
        raise ContractError(
            f"expected {resolution}x{resolution} input, got {tuple(x.shape[-2:])}"
        )


class _ReflectConvDown(nn.Module):
    """3x3 stride-2 conv with mirror padding (keeps constants constant)."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=0)

    def forward(self, x):
        return self.conv(F.pad(x, (1, 1, 1, 1), mode="reflect"))


class _ReflectConv(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=0)

    def forward(self, x):
        return self.conv(F.pad(x, (1, 1, 1, 1), mode="reflect"))


class StyleEncoder(nn.Module):
    """Downsampling trunk ending in global average pooling: spatial layout is
    discarded and only a global style vector survives."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        layers = [_ReflectConv(3, cfg.channels_at(cfg.resolution)), nn.LeakyReLU(0.2)]
        res = cfg.resolution
        while res > cfg.bottleneck:
            layers += [
                _ReflectConvDown(cfg.channels_at(res), cfg.channels_at(res // 2)),
                nn.LeakyReLU(0.2),
            ]
            res //= 2
        self.trunk = nn.Sequential(*layers)
        self.project = nn.Linear(cfg.channels_at(cfg.bottleneck), cfg.style_dim)

    def forward(self, x):
        _check_image(x, self.cfg.resolution)
        h = self.trunk(x)
        pooled = h.mean(dim=(2, 3))
        return self.project(pooled)


class ContentEncoder(nn.Module):
    """Downsampling trunk that keeps spatial structure; returns the bottleneck
    tensor plus the feature map at the skip-connection scale."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Sequential(
            _ReflectConv(3, cfg.channels_at(cfg.resolution)), nn.LeakyReLU(0.2)
        )
        self.stages = nn.ModuleList()
        self.stage_res = []
        res = cfg.resolution
        while res > cfg.bottleneck:
            self.stages.append(
                nn.Sequential(
                    _ReflectConvDown(cfg.channels_at(res), cfg.channels_at(res // 2)),
                    nn.LeakyReLU(0.2),
                )
            )
            self.stage_res.append(res // 2)
            res //= 2

    def forward(self, x):
        _check_image(x, self.cfg.resolution)
        h = self.stem(x)
        skip = None
        for stage, res in zip(self.stages, self.stage_res):
            h = stage(h)
            if res == self.cfg.skip_scale:
                skip = h
        return h, skip


class AgeEmbedder(nn.Module):
    """8 fully connected layers mapping a scalar age to an embedding. The age
    is min-max scaled to [-1, 1] before entering the MLP."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dims = [1] + [cfg.age_dim] * 8
        layers = []
        for i in range(8):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < 7:
                layers.append(nn.LeakyReLU(0.2))
        self.mlp = nn.Sequential(*layers)

    def normalize(self, ages: torch.Tensor) -> torch.Tensor:
        lo, hi = self.cfg.age_min, self.cfg.age_max
        return 2 * (ages - lo) / (hi - lo) - 1

    def forward(self, ages):
        ages = torch.as_tensor(ages).reshape(-1)
        if ((ages < self.cfg.age_min) | (ages > self.cfg.age_max)).any():
            raise ContractError(
                f"age outside [{self.cfg.age_min}, {self.cfg.age_max}]"
            )
        a = self.normalize(ages.to(next(self.parameters()).dtype))
        return self.mlp(a[:, None])


class DecoderBlock(nn.Module):
    """One upsampling block: bilinear 2x, then a style-modulated sub-block and
    an age-modulated sub-block, each demodulated and noise-injected, with a
    per-resolution image head conditioned on age."""

    def __init__(self, in_ch, out_ch, style_dim, age_dim):
        super().__init__()
        self.conv_style = ModulatedConv2d(in_ch, out_ch, 3, style_dim)
        self.noise_style = NoiseInjection()
        self.conv_age = ModulatedConv2d(out_ch, out_ch, 3, age_dim)
        self.noise_age = NoiseInjection()
        self.act = nn.LeakyReLU(0.2)
        self.trgb = ToRGB(out_ch, age_dim)

    def forward(self, x, style, age_emb, noise_gen=None):
        x = upsample_bilinear(x)
        x = self.act(self.noise_style(self.conv_style(x, style), noise_gen))
        x = self.act(self.noise_age(self.conv_age(x, age_emb), noise_gen))
        return x, self.trgb(x, age_emb)


class Generator(nn.Module):
    """Style-based decoder with per-resolution image heads summed into the
    final output and a single blurred skip connection merged (1x1 projection
    then addition) at skip_scale."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch0 = cfg.channels_at(cfg.bottleneck)
        self.conv_style = ModulatedConv2d(ch0, ch0, 3, cfg.style_dim)
        self.noise_in = NoiseInjection()
        self.act = nn.LeakyReLU(0.2)
        self.trgb_in = ToRGB(ch0, cfg.age_dim)

        self.blocks = nn.ModuleList()
        self.block_res = []
        res = cfg.bottleneck
        while res < cfg.resolution:
            self.blocks.append(
                DecoderBlock(
                    cfg.channels_at(res),
                    cfg.channels_at(res * 2),
                    cfg.style_dim,
                    cfg.age_dim,
                )
            )
            self.block_res.append(res * 2)
            res *= 2
        skip_ch = cfg.channels_at(cfg.skip_scale)
        self.skip_proj = nn.Conv2d(skip_ch, skip_ch, 1)

    def forward(self, content, skip, style, age_emb, noise_gen=None, return_rgbs=False):
        x = self.act(self.noise_in(self.conv_style(content, style), noise_gen))
        img = self.trgb_in(x, age_emb)
        rgbs = [img]
        for block, res in zip(self.blocks, self.block_res):
            if skip is not None and x.shape[-1] == self.cfg.skip_scale:
                if skip.shape[-2:] != x.shape[-2:]:
                    raise ContractError(
                        f"skip resolution {tuple(skip.shape[-2:])} does not match "
                        f"decoder activation {tuple(x.shape[-2:])}"
                    )
                x = x + self.skip_proj(skip)
            x, rgb = block(x, style, age_emb, noise_gen)
            rgbs.append(rgb)
            img = upsample_bilinear(img) + rgb
        if return_rgbs:
            return img, rgbs
        return img


class Discriminator(nn.Module):
    """Downsampling realness critic with projection conditioning on the age
    class: score = psi(phi(x)) + <embed(a), phi(x)>."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        layers = [nn.Conv2d(3, cfg.channels_at(cfg.resolution), 3, padding=1), nn.LeakyReLU(0.2)]
        res = cfg.resolution
        while res > 4:
            layers += [
                nn.Conv2d(cfg.channels_at(res), cfg.channels_at(res // 2), 3, stride=2, padding=1),
                nn.LeakyReLU(0.2),
            ]
            res //= 2
        layers += [nn.Conv2d(cfg.channels_at(4), cfg.channels_at(4), 3, padding=1), nn.LeakyReLU(0.2)]
        self.trunk = nn.Sequential(*layers)
        self.to_feat = nn.Linear(cfg.channels_at(4) * 16, cfg.disc_feat_dim)
        self.score_head = nn.Linear(cfg.disc_feat_dim, 1)
        self.embed = nn.Embedding(cfg.n_ages, cfg.disc_feat_dim)

    def _age_index(self, ages):
        ages = torch.as_tensor(ages).reshape(-1).long()
        if ((ages < self.cfg.age_min) | (ages > self.cfg.age_max)).any():
            raise ContractError(
                f"age outside [{self.cfg.age_min}, {self.cfg.age_max}]"
            )
        return ages - self.cfg.age_min

    def forward(self, x, ages):
        _check_image(x, self.cfg.resolution)
        idx = self._age_index(ages).to(x.device)
        phi = F.leaky_relu(self.to_feat(self.trunk(x).flatten(1)), 0.2)
        score = self.score_head(phi)[:, 0] + (self.embed(idx) * phi).sum(dim=1)
        return score


@dataclass
class AgeClassifierOutput:
    logits: torch.Tensor
    pre_softmax_sum: torch.Tensor = field(default=None)

    def __post_init__(self):
        if self.pre_softmax_sum is None:
            self.pre_softmax_sum = self.logits.sum(dim=-1)


class AgeClassifier(nn.Module):
    """Small conv net over age classes. Uses plain ReLUs so guided backprop
    hooks attach cleanly. Also serves, with a different channel plan and seed,
    as the independent evaluation-time age estimator."""

    def __init__(self, cfg: ModelConfig, channels=None):
        super().__init__()
        self.cfg = cfg
        channels = tuple(channels or cfg.classifier_channels)
        self.channels = channels
        blocks = []
        in_ch = 3
        for ch in channels:
            blocks += [
                nn.Conv2d(in_ch, ch, 3, padding=1),
                nn.ReLU(),
                nn.AvgPool2d(2),
            ]
            in_ch = ch
        self.features = nn.Sequential(*blocks)
        self.head = nn.Linear(in_ch, cfg.n_ages)

    def forward(self, x):
        h = self.features(x)
        return self.head(h.mean(dim=(2, 3)))

    def classify_age(self, x, resize_to: int | None = None) -> AgeClassifierOutput:
        """Logits over age classes; the input is bilinearly resized to the
        classifier's native resolution first."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ContractError(f"expected (B,3,H,W) image, got {tuple(x.shape)}")
        target = resize_to or self.cfg.classifier_resolution
        if x.shape[-2:] != (target, target):
            x = F.interpolate(x, size=(target, target), mode="bilinear", align_corners=False)
        return AgeClassifierOutput(logits=self(x))

    def expected_age(self, x) -> torch.Tensor:
        """Softmax-expected age in years (the usual expected-value readout)."""
        logits = self.classify_age(x).logits
        p = F.softmax(logits, dim=-1)
        ages = torch.arange(
            self.cfg.age_min, self.cfg.age_max + 1, dtype=logits.dtype, device=logits.device
        )
        return (p * ages).sum(dim=-1)

    def class_index(self, ages):
        ages = torch.as_tensor(ages).reshape(-1).long()
        if ((ages < self.cfg.age_min) | (ages > self.cfg.age_max)).any():
            raise ContractError(
                f"age outside [{self.cfg.age_min}, {self.cfg.age_max}]"
            )
        return ages - self.cfg.age_min
