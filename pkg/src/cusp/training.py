"""Optimization loop: alternating discriminator/generator updates over the
reconstruction and translation branches, blur-parameter sampling, EMA
weights, loss logging, and checkpoint round-trips."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from . import checkpoint as ckpt
from .data import DEFAULT_GROUPS, make_toy_dataset, stack_batch
from .errors import CheckpointError, ContractError
from .losses import (
    LossWeights,
    MeanVarianceParams,
    adversarial_losses,
    cycle_loss,
    mean_variance_loss,
    recon_loss,
    total_objective,
)
from .masking import BlurParams
from .model import CuspModel
from .networks import AgeClassifier, Discriminator, ModelConfig

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a loss term goes non-finite; carries the diagnostic record."""

    def __init__(self, record):
        super().__init__(f"non-finite loss at step {record.get('step')}: {record}")
        self.record = record


@dataclass
class TrainConfig:
    # model
    resolution: int = 64
    bottleneck: int = 4
    style_dim: int = 256
    age_dim: int = 256
    channel_base: int = 64
    channel_max: int = 512
    disc_feat_dim: int = 256
    age_min: int = 20
    age_max: int = 69
    sigma_max: float = 9.0
    mask_blur_sigma: float = 3.0
    gb_top_class: bool = False
    classifier_channels: str = "32,64,96,128"
    estimator_channels: str = "24,48,96"
    # optimization
    lr: float = 0.0025
    beta1: float = 0.0
    beta2: float = 0.99
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    checkpoint_every: int = 1000
    r1_gamma: float = 1.0
    recon_prob: float = 0.25
    ema_enabled: bool = True
    ema_decay: float = 0.999
    ada_enabled: bool = False  # augmentation hook, intentionally a no-op
    # loss weights
    lambda_r: float = 10.0
    lambda_c: float = 0.06
    lambda_d: float = 1.0
    lambda_cy: float = 10.0
    lambda_mean: float = 0.2
    lambda_var: float = 0.05
    # data / orchestration
    train_size: int = 512
    val_size: int = 64
    classifier_epochs: int = 10
    classifier_train_size: int = 1024
    classifier_seed: int = 1
    estimator_seed: int = 2
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("betas must be in [0, 1)")

    def _channels(self, raw: str) -> tuple[int, ...]:
        try:
            return tuple(int(v) for v in raw.split(","))
        except ValueError as e:
            raise ContractError(f"bad channel list {raw!r}") from e

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            resolution=self.resolution,
            bottleneck=self.bottleneck,
            style_dim=self.style_dim,
            age_dim=self.age_dim,
            channel_base=self.channel_base,
            channel_max=self.channel_max,
            age_min=self.age_min,
            age_max=self.age_max,
            sigma_max=self.sigma_max,
            mask_blur_sigma=self.mask_blur_sigma,
            gb_top_class=self.gb_top_class,
            disc_feat_dim=self.disc_feat_dim,
            classifier_resolution=self.resolution,
            classifier_channels=self._channels(self.classifier_channels),
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_r, self.lambda_c, self.lambda_d, self.lambda_cy)

    def mv_params(self) -> MeanVarianceParams:
        return MeanVarianceParams(self.lambda_mean, self.lambda_var)


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_config(path) -> TrainConfig:
    """Read the `key = value` config format (one pair per line, # comments)."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in fields:
            raise ContractError(f"{path}:{lineno}: unknown config key {key!r}")
        ftype = fields[key].type
        try:
            if ftype == "bool":
                values[key] = _BOOL[raw.lower()]
            elif ftype == "int":
                values[key] = int(raw)
            elif ftype == "float":
                values[key] = float(raw)
            else:
                values[key] = raw
        except (ValueError, KeyError) as e:
            raise ContractError(f"{path}:{lineno}: bad value {raw!r} for {key}") from e
    return TrainConfig(**values)


def write_config(cfg: TrainConfig, path):
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(TrainConfig)]
    Path(path).write_text("\n".join(lines) + "\n")


def sample_blur_params(rng: torch.Generator, sigma_max: float = 9.0) -> BlurParams:
    """Independent uniform draws on [0, sigma_max] for both blur widths."""
    u = torch.rand(2, generator=rng)
    return BlurParams(float(u[0]) * sigma_max, float(u[1]) * sigma_max)


class Trainer:
    """Owns the model pair, optimizers, EMA copy, and the RNG streams that
    make a run reproducible from its seed."""

    def __init__(self, cfg: TrainConfig, model: CuspModel, discriminator: Discriminator):
        self.cfg = cfg
        self.model = model
        self.disc = discriminator
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = torch.optim.Adam(model.trainable_parameters(), lr=cfg.lr, betas=betas)
        self.opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr, betas=betas)
        self.rng = torch.Generator().manual_seed(cfg.seed)
        self.step = 0
        self.ema_model = None
        if cfg.ema_enabled:
            self.ema_model = copy.deepcopy(model)
            self.ema_model.eval()
            for p in self.ema_model.parameters():
                p.requires_grad_(False)
        self.groups = DEFAULT_GROUPS

    # -- sampling ----------------------------------------------------------

    def _randint(self, lo, hi):
        return int(torch.randint(lo, hi, (1,), generator=self.rng))

    def sample_targets(self, ages: torch.Tensor):
        """Pick the branch for this batch: reconstruction (a_t = a_i) with
        probability recon_prob, otherwise per-sample uniform target ages in a
        uniformly chosen group."""
        if float(torch.rand(1, generator=self.rng)) < self.cfg.recon_prob:
            return ages.clone(), True
        targets = []
        for _ in range(len(ages)):
            g = self.groups[self._randint(0, len(self.groups))]
            targets.append(self._randint(g.lo, g.hi + 1))
        return torch.tensor(targets, dtype=ages.dtype), False

    # -- one optimization step --------------------------------------------

    def train_step(self, images: torch.Tensor, ages: torch.Tensor) -> dict:
        cfg = self.cfg
        targets, is_recon = self.sample_targets(ages)
        blur = sample_blur_params(self.rng, cfg.sigma_max)
        noise_gen = torch.Generator().manual_seed(self._randint(0, 2**31 - 1))

        x_hat = self.model.edit(images, targets, blur, noise_generator=noise_gen, clamp=False)

        # discriminator step
        self.opt_d.zero_grad(set_to_none=True)
        real = images.detach().requires_grad_(cfg.r1_gamma > 0)
        d_real = self.disc(real, ages)
        d_fake = self.disc(x_hat.detach(), targets)
        loss_d, _ = adversarial_losses(d_real, d_fake)
        if cfg.r1_gamma > 0:
            (grad,) = torch.autograd.grad(d_real.sum(), real, create_graph=True)
            loss_d = loss_d + cfg.r1_gamma / 2 * grad.pow(2).sum(dim=(1, 2, 3)).mean()
        loss_d.backward()
        self.opt_d.step()

        # generator-side step
        self.opt_g.zero_grad(set_to_none=True)
        d_fake_g = self.disc(x_hat, targets)
        _, loss_adv_g = adversarial_losses(d_real.detach(), d_fake_g)
        logits = self.model.classifier.classify_age(x_hat).logits
        loss_c = mean_variance_loss(
            logits, self.model.classifier.class_index(targets), self.cfg.mv_params()
        )
        zero = x_hat.new_zeros(())
        if is_recon:
            loss_r = recon_loss(images, x_hat)
            loss_cy = zero
        else:
            cycled = self.model.edit(x_hat, ages, blur, noise_generator=noise_gen, clamp=False)
            loss_r = zero
            loss_cy = cycle_loss(images, cycled)
        total = total_objective((loss_r, loss_c, loss_adv_g, loss_cy), cfg.loss_weights())
        total.backward()
        self.opt_g.step()

        self.step += 1
        if self.ema_model is not None:
            self._ema_update()

        record = {
            "step": self.step,
            "L_r": float(loss_r.detach()),
            "L_C": float(loss_c.detach()),
            "L_D": float(loss_adv_g.detach()),
            "L_cy": float(loss_cy.detach()),
            "total": float(total.detach()),
        }
        if not all(map(lambda v: v == v and abs(v) != float("inf"), record.values())):
            raise TrainingDiverged(record)
        return record

    def _ema_update(self):
        decay = self.cfg.ema_decay
        with torch.no_grad():
            for p_ema, p in zip(self.ema_model.parameters(), self.model.parameters()):
                p_ema.lerp_(p, 1 - decay)
            for b_ema, b in zip(self.ema_model.buffers(), self.model.buffers()):
                b_ema.copy_(b)

    def eval_model(self) -> CuspModel:
        return self.ema_model if self.ema_model is not None else self.model

    # -- checkpointing -----------------------------------------------------

    def checkpoint_save(self, path):
        tensors, meta = {}, {}
        ckpt.flatten_state_dict("model", self.model.state_dict(), tensors, meta)
        ckpt.flatten_state_dict("disc", self.disc.state_dict(), tensors, meta)
        if self.ema_model is not None:
            ckpt.flatten_state_dict("ema", self.ema_model.state_dict(), tensors, meta)
        ckpt.flatten_state_dict("opt_g", self.opt_g.state_dict(), tensors, meta)
        ckpt.flatten_state_dict("opt_d", self.opt_d.state_dict(), tensors, meta)
        tensors["rng/trainer"] = self.rng.get_state()
        ckpt.save_archive(
            path,
            kind="editor",
            config=dataclasses.asdict(self.cfg),
            step=self.step,
            tensors=tensors,
            extra={"meta": meta},
        )

    @classmethod
    def checkpoint_load(cls, path) -> "Trainer":
        header, tensors = ckpt.load_archive(path, expect_kind="editor")
        cfg = TrainConfig(**header["config"])
        meta = header["extra"]["meta"]
        model = CuspModel(cfg.model_config())
        disc = Discriminator(cfg.model_config())
        trainer = cls(cfg, model, disc)
        trainer.model.load_state_dict(ckpt.unflatten_into("model", tensors, meta))
        trainer.disc.load_state_dict(ckpt.unflatten_into("disc", tensors, meta))
        if trainer.ema_model is not None and any(k.startswith("ema/") for k in tensors):
            trainer.ema_model.load_state_dict(ckpt.unflatten_into("ema", tensors, meta))
        for name, opt in (("opt_g", trainer.opt_g), ("opt_d", trainer.opt_d)):
            state = ckpt.unflatten_into(name, tensors, meta)
            state.setdefault("state", {})
            opt.load_state_dict(state)
        trainer.rng.set_state(tensors["rng/trainer"].to(torch.uint8))
        trainer.step = header["step"]
        trainer.model.freeze_classifier()
        return trainer


# ---------------------------------------------------------------------------
# Classifier training and run orchestration
# ---------------------------------------------------------------------------

def train_classifier(
    cfg: ModelConfig,
    records,
    epochs: int,
    seed: int,
    channels=None,
    batch_size: int = 32,
    lr: float = 2e-3,
    mv: MeanVarianceParams | None = None,
) -> AgeClassifier:
    """Fit an age classifier on labeled records with the mean-variance loss."""
    torch.manual_seed(seed)
    clf = AgeClassifier(cfg, channels=channels)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    rng = torch.Generator().manual_seed(seed)
    images, ages = stack_batch(records)
    idx_all = torch.arange(len(records))
    for _ in range(epochs):
        perm = idx_all[torch.randperm(len(records), generator=rng)]
        for start in range(0, len(records), batch_size):
            sel = perm[start : start + batch_size]
            opt.zero_grad(set_to_none=True)
            logits = clf.classify_age(images[sel]).logits
            loss = mean_variance_loss(logits, clf.class_index(ages[sel]), mv)
            loss.backward()
            opt.step()
    clf.eval()
    return clf


def classifier_mae(clf: AgeClassifier, records) -> float:
    images, ages = stack_batch(records)
    with torch.no_grad():
        pred = clf.expected_age(images)
    return float((pred - ages.to(pred.dtype)).abs().mean())


def save_classifier(clf: AgeClassifier, path, kind: str):
    tensors, meta = {}, {}
    ckpt.flatten_state_dict("clf", clf.state_dict(), tensors, meta)
    ckpt.save_archive(
        path,
        kind=kind,
        config=clf.cfg.to_dict(),
        step=0,
        tensors=tensors,
        extra={"meta": meta, "channels": list(clf.channels)},
    )


def load_classifier(path, kind: str) -> AgeClassifier:
    header, tensors = ckpt.load_archive(path, expect_kind=kind)
    cfg = ModelConfig.from_dict(header["config"])
    clf = AgeClassifier(cfg, channels=tuple(header["extra"]["channels"]))
    clf.load_state_dict(ckpt.unflatten_into("clf", tensors, header["extra"]["meta"]))
    clf.eval()
    return clf


def run_training(cfg: TrainConfig, log_fn=None) -> dict:
    """Full orchestration: toy data, the frozen classifier, the independent
    estimator, then the adversarial editor training. Returns artifact paths.

    Classifier/estimator checkpoints are reused when already present in
    out_dir, so repeated runs skip their training.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mcfg = cfg.model_config()

    train_records = make_toy_dataset(cfg.train_size, seed=cfg.seed, resolution=cfg.resolution)
    val_records = make_toy_dataset(cfg.val_size, seed=cfg.seed + 10_000, resolution=cfg.resolution)

    clf_path = out / "classifier.ckpt"
    est_path = out / "estimator.ckpt"
    if clf_path.exists():
        classifier = load_classifier(clf_path, "classifier")
    else:
        clf_records = make_toy_dataset(
            cfg.classifier_train_size, seed=cfg.classifier_seed, resolution=cfg.resolution
        )
        classifier = train_classifier(
            mcfg, clf_records, cfg.classifier_epochs, cfg.classifier_seed
        )
        save_classifier(classifier, clf_path, "classifier")
    if est_path.exists():
        estimator = load_classifier(est_path, "estimator")
    else:
        est_records = make_toy_dataset(
            cfg.classifier_train_size, seed=cfg.estimator_seed, resolution=cfg.resolution
        )
        estimator = train_classifier(
            mcfg, est_records, cfg.classifier_epochs, cfg.estimator_seed,
            channels=cfg._channels(cfg.estimator_channels),
        )
        save_classifier(estimator, est_path, "estimator")
    log.info("classifier MAE %.2f / estimator MAE %.2f (held-out toy units)",
             classifier_mae(classifier, val_records), classifier_mae(estimator, val_records))

    torch.manual_seed(cfg.seed)
    model = CuspModel(mcfg, classifier=classifier)
    disc = Discriminator(mcfg)
    trainer = Trainer(cfg, model, disc)

    images, ages = stack_batch(train_records)
    steps_per_epoch = max(1, len(train_records) // cfg.batch_size)
    ckpt_path = out / "editor.ckpt"
    log_path = out / "loss_log.ndjson"
    with open(log_path, "w") as logf:
        for _ in range(cfg.epochs):
            perm = torch.randperm(len(train_records), generator=trainer.rng)
            for b in range(steps_per_epoch):
                sel = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                record = trainer.train_step(images[sel], ages[sel])
                logf.write(json.dumps(record) + "\n")
                if log_fn is not None:
                    log_fn(record)
                if trainer.step % cfg.checkpoint_every == 0:
                    trainer.checkpoint_save(ckpt_path)
    trainer.checkpoint_save(ckpt_path)
    return {
        "checkpoint": ckpt_path,
        "classifier": clf_path,
        "estimator": est_path,
        "loss_log": log_path,
        "trainer": trainer,
        "estimator_model": estimator,
        "val_records": val_records,
    }


def load_editor(path) -> tuple[CuspModel, TrainConfig, int]:
    """Load just the (EMA when present) editing model for inference."""
    header, tensors = ckpt.load_archive(path, expect_kind="editor")
    cfg = TrainConfig(**header["config"])
    meta = header["extra"]["meta"]
    model = CuspModel(cfg.model_config())
    prefix = "ema" if any(k.startswith("ema/") for k in tensors) else "model"
    model.load_state_dict(ckpt.unflatten_into(prefix, tensors, meta))
    model.eval()
    model.freeze_classifier()
    return model, cfg, header["step"]
