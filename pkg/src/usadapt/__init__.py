"""Adapter-tuned hierarchical encoder with auxiliary feature fusion, built on a numpy autodiff core."""
from .data import PhantomSpec, Sample, generate
from .metrics import MetricReport, dice_ce_loss
from .model import ABLATION_MODES, ModelConfig, SegmentationModel, load_model
from .tensor import ConfigError, NonFiniteError, ShapeError, Tensor
from .train import TrainConfig, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "ABLATION_MODES", "ConfigError", "MetricReport", "ModelConfig", "NonFiniteError", "PhantomSpec",
    "Sample", "SegmentationModel", "ShapeError", "Tensor", "TrainConfig", "dice_ce_loss", "generate",
    "load_model", "lr_at", "train",
]
