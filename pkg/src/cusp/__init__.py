"""Face age editing with user-adjustable structure preservation.

The model carries a saliency-gated skip connection whose two blur strengths
(sigma_m inside the mask, sigma_g outside) set how much of the input's
structure survives the edit. Training, evaluation, a CLI, and an HTTP
service live in the submodules; the pieces most scripts want are re-exported
here.
"""

from .blocks import ModulatedConv2d, blur2d, gaussian_kernel, modulate_weights
from .checkpoint import FORMAT_TAG, load_archive, save_archive
from .data import DEFAULT_GROUPS, AgeGroup, make_toy_dataset, render_toy_face
from .errors import CheckpointError, ContractError
from .losses import LossWeights, MeanVarianceParams, mean_variance_loss, total_objective
from .masking import BlurParams, blur_skip, guided_backprop, mask_from_saliency
from .model import CuspModel, forward_edit
from .networks import AgeClassifier, Discriminator, Generator, ModelConfig
from .training import TrainConfig, Trainer, load_editor, parse_config, run_training

__version__ = "0.1.0"

__all__ = [
    "AgeClassifier",
    "AgeGroup",
    "BlurParams",
    "CheckpointError",
    "ContractError",
    "CuspModel",
    "DEFAULT_GROUPS",
    "Discriminator",
    "FORMAT_TAG",
    "Generator",
    "LossWeights",
    "MeanVarianceParams",
    "ModelConfig",
    "ModulatedConv2d",
    "TrainConfig",
    "Trainer",
    "blur2d",
    "blur_skip",
    "forward_edit",
    "gaussian_kernel",
    "guided_backprop",
    "load_archive",
    "load_editor",
    "make_toy_dataset",
    "mask_from_saliency",
    "mean_variance_loss",
    "modulate_weights",
    "parse_config",
    "render_toy_face",
    "run_training",
    "save_archive",
    "total_objective",
    "__version__",
]
