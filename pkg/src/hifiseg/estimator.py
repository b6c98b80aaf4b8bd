"""scikit-learn style wrapper around the training loop.

``X`` is an image batch of shape (N, 3, H, W) with values in [0, 1]; ``y`` is
a binary mask batch of shape (N, H, W) or (N, 1, H, W).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Sample
from .model import VARIANTS, ModelConfig
from .training import TrainSettings, evaluate, predict_probs, train

__all__ = ["HiFiSegSegmenter", "check_images", "check_masks"]

PRESETS = ("toy", "base")


def check_images(X, name: str = "X") -> np.ndarray:
    """Return ``X`` as a float array (N, 3, H, W) in [0, 1] with H, W multiples of 32."""
    X = np.asarray(X)
    if X.dtype.kind not in "fiu":
        raise TypeError(f"{name} must be numeric, got dtype {X.dtype}")
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if X.shape[2] % 32 or X.shape[3] % 32:
        raise ValueError(f"{name} spatial size {X.shape[2:]} is not a multiple of 32")
    X = X.astype(np.float32, copy=False)
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains NaN or Inf")
    if X.min() < 0 or X.max() > 1:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return X


def check_masks(y, X: Optional[np.ndarray] = None, name: str = "y") -> np.ndarray:
    """Return ``y`` as uint8 (N, 1, H, W) in {0, 1}, matching ``X`` when given."""
    y = np.asarray(y)
    if y.ndim == 3:
        y = y[:, None]
    if y.ndim != 4 or y.shape[1] != 1:
        raise ValueError(f"{name} must have shape (N, H, W) or (N, 1, H, W), got {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"{name} must be binary")
    if X is not None and (y.shape[0] != X.shape[0] or y.shape[2:] != X.shape[2:]):
        raise ValueError(f"{name} shape {y.shape} does not match X shape {X.shape}")
    return y.astype(np.uint8)


class HiFiSegSegmenter(BaseEstimator):
    """Binary segmenter with ``fit`` / ``predict`` / ``predict_proba`` / ``score``.

    ``score`` is the mean Dice of the thresholded predictions.
    """

    def __init__(self, preset: str = "toy", variant: str = "full", steps: int = 300,
                 batch_size: int = 4, lr: float = 3e-3, weight_decay: float = 1e-4,
                 multiscale: bool = True, seed: int = 0, score_head: str = "p1"):
        self.preset = preset
        self.variant = variant
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.multiscale = multiscale
        self.seed = seed
        self.score_head = score_head

    def _model_config(self, hw: int) -> ModelConfig:
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {sorted(VARIANTS)}, got {self.variant!r}")
        base = ModelConfig.toy(input_hw=hw) if self.preset == "toy" else ModelConfig.base(input_hw=hw)
        return base.variant(self.variant)

    def fit(self, X, y):
        X = check_images(X)
        y = check_masks(y, X)
        samples = [Sample(X[i:i + 1], y[i:i + 1], f"{i:06d}") for i in range(len(X))]
        settings = TrainSettings(steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                                 weight_decay=self.weight_decay, seed=self.seed,
                                 multiscale=self.multiscale)
        result = train(self._model_config(X.shape[2]), samples, settings)
        self.model_ = result.model
        self.loss_curve_ = result.losses
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return predict_probs(self.model_, check_images(X), head=self.score_head)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.uint8)

    def score(self, X, y) -> float:
        check_is_fitted(self, "model_")
        X = check_images(X)
        y = check_masks(y, X)
        samples = [Sample(X[i:i + 1], y[i:i + 1], str(i)) for i in range(len(X))]
        return evaluate(self.model_, samples, head=self.score_head).mdice
