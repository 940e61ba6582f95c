import pytest
import torch
from hypothesis import HealthCheck, settings

torch.set_num_threads(1)

settings.register_profile(
    "desk",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("desk")


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def tiny_cfg():
    from cusp.networks import ModelConfig

    return ModelConfig(
        resolution=32,
        bottleneck=4,
        style_dim=16,
        age_dim=16,
        channel_base=8,
        channel_max=16,
        disc_feat_dim=16,
        classifier_resolution=32,
        classifier_channels=(8, 16),
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    from cusp.model import CuspModel

    torch.manual_seed(7)
    return CuspModel(tiny_cfg)


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    """One minimal end-to-end training run shared by the tests that need a
    real checkpoint on disk."""
    import dataclasses
    from pathlib import Path

    from cusp.training import parse_config, run_training

    cfg = parse_config(Path(__file__).resolve().parent.parent / "configs" / "smoke.cfg")
    cfg = dataclasses.replace(cfg, out_dir=str(tmp_path_factory.mktemp("smoke_run")))
    return cfg, run_training(cfg)
