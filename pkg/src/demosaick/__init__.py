"""Bayer demosaicking on a self-contained numpy autodiff engine.

Public surface: the tape/Tensor engine (:mod:`demosaick.tensor`,
:mod:`demosaick.ops`), CFA plumbing (:mod:`demosaick.cfa`), the model and its
checkpoints, float64 metrics, the differentiable training loss, the trainer,
image I/O, an estimator-style wrapper, and the ``demosaick`` CLI.
"""

from .cfa import demosaic_nn, mosaic, pack_rggb, unpack_rggb, warm_start
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    CheckpointChecksumError,
    CheckpointConfigError,
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    ImageFormatError,
    NonFiniteError,
)
from .estimator import BayerDemosaicker, NotFittedError
from .losses import LossConfig, mixed_loss
from .metrics import MetricReport, ms_ssim, psnr, ssim
from .model import (
    DemosaickModel,
    ModelConfig,
    ablation_config,
    build_model,
    default_config,
    param_count,
    param_table,
    tiny_config,
)
from .tensor import ParamLeaf, Tape, Tensor, backward, constant, precision, set_precision
from .training import AdamW, TrainConfig, lr_at, sample_batch, train

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "BayerDemosaicker",
    "CheckpointChecksumError",
    "CheckpointConfigError",
    "CheckpointError",
    "CheckpointVersionError",
    "ConfigError",
    "ContractError",
    "DemosaickModel",
    "ImageFormatError",
    "LossConfig",
    "MetricReport",
    "ModelConfig",
    "NonFiniteError",
    "NotFittedError",
    "ParamLeaf",
    "Tape",
    "Tensor",
    "TrainConfig",
    "ablation_config",
    "backward",
    "build_model",
    "constant",
    "default_config",
    "demosaic_nn",
    "load_checkpoint",
    "lr_at",
    "mixed_loss",
    "mosaic",
    "ms_ssim",
    "pack_rggb",
    "param_count",
    "param_table",
    "precision",
    "psnr",
    "sample_batch",
    "save_checkpoint",
    "set_precision",
    "ssim",
    "tiny_config",
    "train",
    "unpack_rggb",
    "warm_start",
    "__version__",
]
