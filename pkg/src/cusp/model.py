"""The editing model bundle: encoders, age MLP, generator, and the frozen
age classifier wired together into the full edit pipeline."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .masking import (
    BlurParams,
    SaliencyMask,
    blur_skip,
    guided_backprop,
    mask_from_saliency,
    resize_mask,
)
from .networks import (
    AgeClassifier,
    AgeEmbedder,
    ContentEncoder,
    Generator,
    ModelConfig,
    StyleEncoder,
)


class CuspModel(nn.Module):
    """Full editing network T(x, a_t). The classifier is frozen: it only
    supplies the saliency mask and the age-matching loss."""

    def __init__(self, cfg: ModelConfig, classifier: AgeClassifier | None = None):
        super().__init__()
        self.cfg = cfg
        self.style_enc = StyleEncoder(cfg)
        self.content_enc = ContentEncoder(cfg)
        self.age_mlp = AgeEmbedder(cfg)
        self.generator = Generator(cfg)
        self.classifier = classifier if classifier is not None else AgeClassifier(cfg)
        self.freeze_classifier()

    def freeze_classifier(self):
        self.classifier.eval()
        for p in self.classifier.parameters():
            p.requires_grad_(False)

    def trainable_modules(self) -> dict[str, nn.Module]:
        return {
            "style_enc": self.style_enc,
            "content_enc": self.content_enc,
            "age_mlp": self.age_mlp,
            "generator": self.generator,
        }

    def trainable_parameters(self):
        for m in self.trainable_modules().values():
            yield from m.parameters()

    def compute_mask(self, x: torch.Tensor) -> SaliencyMask:
        """Guided-backprop saliency mask at classifier resolution. Computed
        outside the training graph; the mask acts as a constant gate."""
        res = self.cfg.classifier_resolution
        if x.shape[-2:] != (res, res):
            x = F.interpolate(x, size=(res, res), mode="bilinear", align_corners=False)
        b = guided_backprop(self.classifier, x, top_class_only=self.cfg.gb_top_class)
        return mask_from_saliency(b, self.cfg.mask_blur_sigma)

    def edit(
        self,
        x: torch.Tensor,
        ages,
        blur: BlurParams,
        noise_generator: torch.Generator | None = None,
        clamp: bool = True,
        return_mask: bool = False,
    ):
        """x -> (style, content) -> mask-gated blurred skip -> generator.

        ages may be a scalar or a per-sample tensor of target ages in years.
        """
        blur.validate(self.cfg.sigma_max)
        ages = torch.as_tensor(ages).reshape(-1)
        if ages.numel() == 1 and x.shape[0] > 1:
            ages = ages.expand(x.shape[0])
        style = self.style_enc(x)
        content, skip = self.content_enc(x)
        with torch.no_grad():
            mask = self.compute_mask(x)
        m = resize_mask(mask.values, skip.shape[-2], skip.shape[-1])
        skip_blurred = blur_skip(skip, m, blur)
        age_emb = self.age_mlp(ages)
        img = self.generator(content, skip_blurred, style, age_emb, noise_generator)
        if clamp:
            img = img.clamp(-1.0, 1.0)
        if return_mask:
            return img, mask
        return img


def forward_edit(
    model: CuspModel,
    x: torch.Tensor,
    ages,
    blur: BlurParams,
    noise_seed: int | None = None,
):
    """Inference entry point: clamped output plus the saliency mask; a fixed
    noise_seed makes the result bit-reproducible."""
    gen = None
    if noise_seed is not None:
        gen = torch.Generator().manual_seed(noise_seed)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            img, mask = model.edit(x, ages, blur, noise_generator=gen, return_mask=True)
    finally:
        model.train(was_training)
        model.freeze_classifier()
    return img, mask
