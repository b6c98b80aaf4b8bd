"""Seeded training loop and evaluation over in-memory samples."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .checkpoint import save_model
from .core.optim import AdamW
from .core.tensor import Tensor, backward, no_grad
from .data import SCALES, Sample, multiscale_batch, stack_batch
from .losses import LossWeights, total_loss
from .metrics import MetricsReport, evaluate_masks
from .model import HiFiSeg, ModelConfig

__all__ = ["TrainSettings", "TrainResult", "LOSS_COLUMNS", "train", "predict_probs", "evaluate", "write_loss_csv"]

logger = logging.getLogger(__name__)

MIN_LR_FRACTION = 0.02
LOSS_COLUMNS = ("step", "loss", "bce1", "iou1", "bce2", "iou2")


@dataclass
class TrainSettings:
    steps: int = 300
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    multiscale: bool = True
    lambda_bce: float = 1.0
    lambda_iou: float = 1.0
    ckpt_every: int = 0
    schedule: str = "constant"
    warmup: int = 0

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based ``step``: linear warmup, then constant or cosine decay."""
        if self.warmup and step <= self.warmup:
            return self.lr * step / self.warmup
        if self.schedule == "constant":
            return self.lr
        if self.schedule == "cosine":
            span = max(1, self.steps - self.warmup)
            progress = min(1.0, (step - self.warmup) / span)
            return self.lr * (MIN_LR_FRACTION + (1 - MIN_LR_FRACTION) * 0.5 * (1 + math.cos(math.pi * progress)))
        raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class TrainResult:
    model: HiFiSeg
    log: List[dict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def losses(self) -> List[float]:
        return [row["loss"] for row in self.log]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def write_loss_csv(path, log: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for row in log:
            w.writerow([row["step"]] + [repr(row[k]) for k in LOSS_COLUMNS[1:]])


def train(cfg: ModelConfig, samples: Sequence[Sample], settings: TrainSettings,
          out_dir: Optional[Path] = None, model: Optional[HiFiSeg] = None,
          on_step: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train from scratch (or continue ``model``) with AdamW.

    Step ``i`` rescales its batch by ``SCALES[i % 3]`` when multi-scale is on.
    With ``out_dir`` the loss log is written to ``loss.csv`` and checkpoints
    every ``ckpt_every`` steps plus ``final.hifi``.
    """
    if not samples:
        raise ValueError("no training samples")
    if model is None:
        model = HiFiSeg(cfg, seed=settings.seed)
    params = model.parameters()
    opt = AdamW(params, lr=settings.lr, weight_decay=settings.weight_decay)
    rng = np.random.default_rng(settings.seed)
    batches = _batches(len(samples), settings.batch_size, rng)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    result = TrainResult(model)
    t0 = time.perf_counter()
    for step in range(1, settings.steps + 1):
        idx = next(batches)
        chosen = [samples[i] for i in idx]
        if settings.multiscale:
            images, masks = multiscale_batch(chosen, SCALES[(step - 1) % len(SCALES)])
        else:
            images, masks = stack_batch(chosen)
        x = Tensor(images.astype(params[0].dtype, copy=False))
        lw = LossWeights.for_resolution(images.shape[-1], lambda_bce=settings.lambda_bce,
                                        lambda_iou=settings.lambda_iou)
        preds = model(x)
        loss, parts = total_loss(preds.p1, preds.p2, masks, lw)
        opt.zero_grad()
        backward(loss)
        opt.lr = settings.lr_at(step)
        opt.step()
        row = {"step": step, "loss": loss.item(), **parts}
        result.log.append(row)
        if on_step is not None:
            on_step(row)
        if step % 50 == 0 or step == 1:
            logger.info("step %d loss %.4f", step, row["loss"])
        if out_dir is not None and settings.ckpt_every and step % settings.ckpt_every == 0:
            save_model(out_dir / f"ckpt_{step:06d}.hifi", model, {"step": step})
    result.seconds = time.perf_counter() - t0
    if out_dir is not None:
        write_loss_csv(out_dir / "loss.csv", result.log)
        save_model(out_dir / "final.hifi", model, {"step": settings.steps})
    return result


def predict_probs(model: HiFiSeg, images: np.ndarray, head: str = "p1", batch_size: int = 8) -> np.ndarray:
    dtype = model.parameters()[0].dtype
    outs = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            preds = model(Tensor(np.asarray(images[start:start + batch_size], dtype=dtype)))
            outs.append(preds.probabilities(head))
    return np.concatenate(outs, axis=0)


def evaluate(model: HiFiSeg, samples: Sequence[Sample], head: str = "p1", mae_mode: str = "soft",
             batch_size: int = 8) -> MetricsReport:
    if not samples:
        raise ValueError("empty evaluation set")
    images, masks = stack_batch(samples)
    probs = predict_probs(model, images, head, batch_size)
    return evaluate_masks(list(probs), list(masks), [s.id for s in samples], mae_mode=mae_mode)
