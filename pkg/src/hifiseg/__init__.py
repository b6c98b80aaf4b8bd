"""Polyp segmentation network with a small numpy autodiff engine."""

__version__ = "0.1.0"

from .data import Sample, SynthConfig, load_dataset, synth_generate
from .estimator import HiFiSegSegmenter
from .losses import LossWeights, total_loss
from .metrics import MetricsReport, dice, iou, mae
from .model import VARIANTS, HiFiSeg, ModelConfig, Predictions, build_model, infer_mask
from .training import TrainSettings, evaluate, train

__all__ = [
    "__version__",
    "Sample",
    "SynthConfig",
    "load_dataset",
    "synth_generate",
    "HiFiSegSegmenter",
    "LossWeights",
    "total_loss",
    "MetricsReport",
    "dice",
    "iou",
    "mae",
    "VARIANTS",
    "HiFiSeg",
    "ModelConfig",
    "Predictions",
    "build_model",
    "infer_mask",
    "TrainSettings",
    "evaluate",
    "train",
]
