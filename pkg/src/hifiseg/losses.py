"""Boundary-weighted BCE + IoU training loss applied to both prediction heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from .core import functional as F
from .core.tensor import DimensionError, Tensor, as_tensor, tensor_mean

__all__ = [
    "LossWeights",
    "boundary_kernel_for",
    "weight_map",
    "weighted_bce",
    "weighted_iou",
    "weighted_iou_probs",
    "head_loss",
    "total_loss",
]

IOU_EPS = 1e-6
_CHW = (1, 2, 3)


@dataclass
class LossWeights:
    lambda_bce: float = 1.0
    lambda_iou: float = 1.0
    boundary_kernel: int = 31

    def __post_init__(self):
        if self.lambda_bce < 0 or self.lambda_iou < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_bce == 0 and self.lambda_iou == 0:
            raise ValueError("at least one loss weight must be positive")
        if self.boundary_kernel < 1 or self.boundary_kernel % 2 == 0:
            raise ValueError(f"boundary_kernel must be odd, got {self.boundary_kernel}")

    @classmethod
    def for_resolution(cls, hw: int, **kw) -> "LossWeights":
        return cls(boundary_kernel=boundary_kernel_for(hw), **kw)


def boundary_kernel_for(hw: int) -> int:
    """Odd window size scaled from 31 px at 352 px."""
    return 2 * int(round((31 * hw / 352 - 1) / 2)) + 1


def _as_array(g) -> np.ndarray:
    return g.data if isinstance(g, Tensor) else np.asarray(g)


def _check_binary(g: np.ndarray, op: str) -> None:
    if not np.all((g == 0) | (g == 1)):
        raise ValueError(f"{op}: ground truth must be binary")


def weight_map(g, k: int) -> np.ndarray:
    """``1 + 5 * |meanpool_k(g) - g|`` with zero padding at the border."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"weight_map: window must be odd, got {k}")
    g = _as_array(g).astype(np.float64)
    pooled = uniform_filter(g, size=(1, 1, k, k), mode="constant", cval=0.0)
    return 1.0 + 5.0 * np.abs(pooled - g)


def _check_pair(p: Tensor, g: np.ndarray, op: str) -> None:
    if p.shape != g.shape:
        axis = next(("NCHW"[i] for i in range(4) if p.shape[i] != g.shape[i]), "rank")
        raise DimensionError(op, axis, p.shape, g.shape)


def weighted_bce(p_logits: Tensor, g, w: Optional[np.ndarray] = None) -> Tensor:
    """Sum(w * bce(sigmoid(p), g)) / Sum(w) per image, averaged over the batch.

    Computed from logits as ``softplus(p) - p * g``.
    """
    g = _as_array(g)
    _check_pair(p_logits, g, "weighted_bce")
    _check_binary(g, "weighted_bce")
    dt = p_logits.dtype
    w = np.ones(g.shape, dtype=dt) if w is None else np.asarray(w, dtype=dt)
    gt = as_tensor(g, like=p_logits)
    wt = as_tensor(w, like=p_logits)
    per_pixel = F.softplus(p_logits) - p_logits * gt
    inv_norm = as_tensor(1.0 / w.sum(axis=(1, 2, 3), keepdims=True), like=p_logits)
    return tensor_mean(F.sum_axes(per_pixel * wt, _CHW) * inv_norm)


def weighted_iou_probs(prob: Tensor, g, w: Optional[np.ndarray] = None, eps: float = IOU_EPS) -> Tensor:
    """``1 - (Sum w*p*g + eps) / (Sum w*(p + g - p*g) + eps)`` per image, batch-averaged."""
    g = _as_array(g)
    _check_pair(prob, g, "weighted_iou")
    dt = prob.dtype
    w = np.ones(g.shape, dtype=dt) if w is None else np.asarray(w, dtype=dt)
    gt = as_tensor(g, like=prob)
    wt = as_tensor(w, like=prob)
    inter_map = prob * gt
    inter = F.sum_axes(inter_map * wt, _CHW)
    union = F.sum_axes((prob + gt - inter_map) * wt, _CHW)
    return tensor_mean(1.0 - (inter + eps) / (union + eps))


def weighted_iou(p_logits: Tensor, g, w: Optional[np.ndarray] = None, eps: float = IOU_EPS) -> Tensor:
    _check_binary(_as_array(g), "weighted_iou")
    return weighted_iou_probs(F.sigmoid(p_logits), g, w, eps)


def head_loss(p_logits: Tensor, g, lw: LossWeights, w: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor, Tensor]:
    """(combined, bce, iou) for one prediction head."""
    if w is None:
        w = weight_map(g, lw.boundary_kernel)
    bce = weighted_bce(p_logits, g, w)
    iou = weighted_iou(p_logits, g, w)
    return lw.lambda_bce * bce + lw.lambda_iou * iou, bce, iou


def total_loss(p1: Tensor, p2: Tensor, g, lw: Optional[LossWeights] = None) -> Tuple[Tensor, Dict[str, float]]:
    """Sum of the per-head losses; also returns the four components as floats."""
    g = _as_array(g)
    if lw is None:
        lw = LossWeights.for_resolution(g.shape[-1])
    w = weight_map(g, lw.boundary_kernel)
    l1, bce1, iou1 = head_loss(p1, g, lw, w)
    l2, bce2, iou2 = head_loss(p2, g, lw, w)
    total = l1 + l2
    parts = {"bce1": bce1.item(), "iou1": iou1.item(), "bce2": bce2.item(), "iou2": iou2.item()}
    return total, parts
