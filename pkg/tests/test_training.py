import dataclasses
import json

import pytest
import torch

from cusp.data import make_toy_dataset, stack_batch
from cusp.errors import ContractError
from cusp.model import CuspModel
from cusp.networks import Discriminator
from cusp.training import (
    TrainConfig,
    Trainer,
    TrainingDiverged,
    load_editor,
    parse_config,
    sample_blur_params,
    train_classifier,
    write_config,
)

TINY = dict(
    resolution=32,
    bottleneck=4,
    style_dim=16,
    age_dim=16,
    channel_base=8,
    channel_max=16,
    disc_feat_dim=16,
    classifier_channels="8,16",
    estimator_channels="8,16",
    batch_size=4,
    train_size=8,
    val_size=4,
    epochs=1,
    classifier_epochs=1,
    classifier_train_size=8,
)


def _tiny_trainer(seed=0, **overrides):
    cfg = TrainConfig(**{**TINY, **overrides, "seed": seed})
    torch.manual_seed(seed)
    model = CuspModel(cfg.model_config())
    disc = Discriminator(cfg.model_config())
    return cfg, Trainer(cfg, model, disc)


def _batch(cfg, n=4, seed=0):
    recs = make_toy_dataset(n, seed=seed, resolution=cfg.resolution)
    return stack_batch(recs)


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = TrainConfig(**TINY)
        path = tmp_path / "c.cfg"
        write_config(cfg, path)
        assert parse_config(path) == cfg

    def test_comments_and_blanks(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\n\nlr = 0.001  # inline\nbatch_size = 2\n")
        cfg = parse_config(p)
        assert cfg.lr == 0.001 and cfg.batch_size == 2

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("learning_rate = 0.1\n")
        with pytest.raises(ContractError, match="unknown config key"):
            parse_config(p)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("lr = fast\n")
        with pytest.raises(ContractError, match="bad value"):
            parse_config(p)

    def test_missing_equals(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("lr 0.1\n")
        with pytest.raises(ContractError):
            parse_config(p)

    def test_bool_parsing(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("ema_enabled = false\ngb_top_class = yes\n")
        cfg = parse_config(p)
        assert cfg.ema_enabled is False and cfg.gb_top_class is True

    def test_invalid_hyperparameters(self):
        with pytest.raises(ContractError):
            TrainConfig(lr=0.0)
        with pytest.raises(ContractError):
            TrainConfig(beta2=1.0)


class TestBlurSampling:
    def test_within_bounds_and_deterministic(self):
        rng = torch.Generator().manual_seed(3)
        draws = [sample_blur_params(rng, 9.0) for _ in range(200)]
        assert all(0.0 <= p.sigma_m <= 9.0 and 0.0 <= p.sigma_g <= 9.0 for p in draws)
        rng2 = torch.Generator().manual_seed(3)
        again = [sample_blur_params(rng2, 9.0) for _ in range(200)]
        assert draws == again

    def test_covers_the_range(self):
        rng = torch.Generator().manual_seed(4)
        ms = [sample_blur_params(rng, 9.0).sigma_m for _ in range(500)]
        assert min(ms) < 1.0 and max(ms) > 8.0


class TestTrainStep:
    def test_record_has_exact_log_keys(self):
        cfg, tr = _tiny_trainer()
        images, ages = _batch(cfg)
        rec = tr.train_step(images, ages)
        assert list(rec.keys()) == ["step", "L_r", "L_C", "L_D", "L_cy", "total"]
        assert rec["step"] == 1
        assert all(v == v for v in rec.values())  # finite

    def test_branches_are_exclusive(self):
        cfg, tr = _tiny_trainer()
        images, ages = _batch(cfg)
        saw_recon = saw_cycle = False
        for _ in range(12):
            rec = tr.train_step(images, ages)
            assert rec["L_r"] == 0.0 or rec["L_cy"] == 0.0
            saw_recon |= rec["L_r"] > 0.0
            saw_cycle |= rec["L_cy"] > 0.0
        assert saw_recon and saw_cycle

    def test_updates_generator_and_discriminator(self):
        cfg, tr = _tiny_trainer()
        images, ages = _batch(cfg)
        g_before = [p.clone() for p in tr.model.generator.parameters()]
        d_before = [p.clone() for p in tr.disc.parameters()]
        clf_before = [p.clone() for p in tr.model.classifier.parameters()]
        tr.train_step(images, ages)
        assert any(not torch.equal(a, b)
                   for a, b in zip(g_before, tr.model.generator.parameters()))
        assert any(not torch.equal(a, b) for a, b in zip(d_before, tr.disc.parameters()))
        # the age classifier never moves
        assert all(torch.equal(a, b)
                   for a, b in zip(clf_before, tr.model.classifier.parameters()))

    def test_determinism_across_fresh_trainers(self):
        recs = []
        for _ in range(2):
            cfg, tr = _tiny_trainer(seed=5)
            images, ages = _batch(cfg)
            recs.append([tr.train_step(images, ages) for _ in range(5)])
        assert recs[0] == recs[1]

    def test_seed_changes_trajectory(self):
        cfg1, tr1 = _tiny_trainer(seed=1)
        cfg2, tr2 = _tiny_trainer(seed=2)
        images, ages = _batch(cfg1)
        a = [tr1.train_step(images, ages) for _ in range(3)]
        b = [tr2.train_step(images, ages) for _ in range(3)]
        assert a != b

    def test_divergence_raises_with_record(self):
        cfg, tr = _tiny_trainer()
        images, ages = _batch(cfg)
        with torch.no_grad():
            for p in tr.model.generator.parameters():
                p.fill_(float("nan"))
        with pytest.raises(TrainingDiverged) as exc:
            tr.train_step(images, ages)
        assert "step" in exc.value.record

    def test_targets_sampled_within_groups(self):
        cfg, tr = _tiny_trainer()
        ages = torch.tensor([25, 40, 60, 33])
        for _ in range(20):
            targets, is_recon = tr.sample_targets(ages)
            if is_recon:
                assert torch.equal(targets, ages)
            else:
                assert ((targets >= 20) & (targets <= 69)).all()


class TestEma:
    def test_ema_tracks_model(self):
        cfg, tr = _tiny_trainer(ema_decay=0.5)
        images, ages = _batch(cfg)
        p_model = next(tr.model.generator.parameters())
        p_ema_before = next(tr.ema_model.generator.parameters()).clone()
        tr.train_step(images, ages)
        p_ema_after = next(tr.ema_model.generator.parameters())
        want = p_ema_before.lerp(p_model.detach(), 0.5)
        assert torch.allclose(p_ema_after, want, atol=1e-6)

    def test_ema_disabled(self):
        cfg, tr = _tiny_trainer(ema_enabled=False)
        assert tr.ema_model is None
        assert tr.eval_model() is tr.model


class TestCheckpointResume:
    def test_resume_reproduces_trajectory(self, tmp_path):
        cfg, tr = _tiny_trainer(seed=7)
        images, ages = _batch(cfg)
        for _ in range(3):
            tr.train_step(images, ages)
        path = tmp_path / "mid.ckpt"
        tr.checkpoint_save(path)
        cont = [tr.train_step(images, ages) for _ in range(2)]

        tr2 = Trainer.checkpoint_load(path)
        resumed = [tr2.train_step(images, ages) for _ in range(2)]
        assert cont == resumed
        for a, b in zip(tr.model.parameters(), tr2.model.parameters()):
            assert torch.allclose(a, b, atol=0, rtol=0)

    def test_load_editor_prefers_ema(self, tmp_path):
        cfg, tr = _tiny_trainer(seed=8)
        images, ages = _batch(cfg)
        tr.train_step(images, ages)
        path = tmp_path / "m.ckpt"
        tr.checkpoint_save(path)
        model, loaded_cfg, step = load_editor(path)
        assert step == 1 and loaded_cfg.seed == 8
        for a, b in zip(model.parameters(), tr.ema_model.parameters()):
            assert torch.equal(a, b)


class TestClassifierTraining:
    def test_loss_decreases_and_freezes_cleanly(self, tiny_cfg):
        recs = make_toy_dataset(32, seed=20, resolution=tiny_cfg.resolution)
        clf = train_classifier(tiny_cfg, recs, epochs=3, seed=0, channels=(8, 16))
        assert not clf.training
        images, ages = stack_batch(recs)
        with torch.no_grad():
            pred = clf.expected_age(images)
        assert pred.shape == ages.shape


@pytest.mark.training
class TestSmokeRun:
    def test_run_training_writes_artifacts(self, smoke_run):
        cfg, art = smoke_run
        assert art["checkpoint"].exists()
        assert art["classifier"].exists()
        assert art["estimator"].exists()
        lines = art["loss_log"].read_text().splitlines()
        steps = cfg.epochs * (cfg.train_size // cfg.batch_size)
        assert len(lines) == steps
        for line in lines:
            rec = json.loads(line)
            assert list(rec.keys()) == ["step", "L_r", "L_C", "L_D", "L_cy", "total"]

    def test_loss_log_reproducible(self, smoke_run, tmp_path):
        import dataclasses as dc

        from cusp.training import run_training

        cfg, art = smoke_run
        cfg2 = dc.replace(cfg, out_dir=str(tmp_path / "again"))
        art2 = run_training(cfg2)
        assert art["loss_log"].read_text() == art2["loss_log"].read_text()
