"""Region-overlap and pixel-error metrics, with CSV/JSON report output."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

__all__ = ["SMOOTH", "dice", "iou", "mae", "MetricsReport", "evaluate_masks"]

SMOOTH = 1e-6


def _flat(a) -> np.ndarray:
    return np.asarray(a).reshape(-1)


def _binary(a, name: str) -> np.ndarray:
    a = _flat(a)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be a binary mask")
    return a.astype(bool)


def dice(pred_mask, gt) -> float:
    """(2|P & G| + eps) / (|P| + |G| + eps); both empty gives 1."""
    p, g = _binary(pred_mask, "pred_mask"), _binary(gt, "gt")
    inter = np.count_nonzero(p & g)
    return (2.0 * inter + SMOOTH) / (np.count_nonzero(p) + np.count_nonzero(g) + SMOOTH)


def iou(pred_mask, gt) -> float:
    """(|P & G| + eps) / (|P | G| + eps); both empty gives 1."""
    p, g = _binary(pred_mask, "pred_mask"), _binary(gt, "gt")
    inter = np.count_nonzero(p & g)
    return (inter + SMOOTH) / (np.count_nonzero(p | g) + SMOOTH)


def mae(pred_prob, gt) -> float:
    p = _flat(pred_prob).astype(np.float64)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise ValueError("pred_prob must lie in [0, 1]")
    return float(np.mean(np.abs(p - _binary(gt, "gt"))))


@dataclass
class MetricsReport:
    ids: List[str] = field(default_factory=list)
    dice: List[float] = field(default_factory=list)
    iou: List[float] = field(default_factory=list)
    mae: List[float] = field(default_factory=list)

    def add(self, sample_id: str, d: float, i: float, m: float) -> None:
        self.ids.append(sample_id)
        self.dice.append(float(d))
        self.iou.append(float(i))
        self.mae.append(float(m))

    def __len__(self) -> int:
        return len(self.ids)

    def _mean(self, values: Sequence[float]) -> float:
        if not values:
            raise ValueError("empty evaluation set")
        return float(np.mean(values))

    @property
    def mdice(self) -> float:
        return self._mean(self.dice)

    @property
    def miou(self) -> float:
        return self._mean(self.iou)

    @property
    def mmae(self) -> float:
        return self._mean(self.mae)

    def summary(self) -> dict:
        return {"n": len(self), "mdice": self.mdice, "miou": self.miou, "mae": self.mmae}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "dice", "iou", "mae"])
            for row in zip(self.ids, self.dice, self.iou, self.mae):
                w.writerow([row[0]] + [repr(v) for v in row[1:]])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")

    @classmethod
    def from_csv(cls, path) -> "MetricsReport":
        rep = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rep.add(row["id"], float(row["dice"]), float(row["iou"]), float(row["mae"]))
        return rep


def evaluate_masks(probs: Sequence[np.ndarray], gts: Sequence[np.ndarray],
                   ids: Optional[Sequence[str]] = None, mae_mode: str = "soft",
                   threshold: float = 0.5) -> MetricsReport:
    """Per-image Dice/IoU on thresholded masks and MAE on probabilities (or hard masks)."""
    if len(probs) == 0:
        raise ValueError("empty evaluation set")
    if len(probs) != len(gts):
        raise ValueError(f"{len(probs)} predictions vs {len(gts)} ground truths")
    if mae_mode not in ("soft", "hard"):
        raise ValueError(f"mae_mode must be 'soft' or 'hard', got {mae_mode!r}")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(probs))]
    rep = MetricsReport()
    for sid, p, g in zip(ids, probs, gts):
        hard = (np.asarray(p) > threshold).astype(np.uint8)
        rep.add(sid, dice(hard, g), iou(hard, g), mae(p if mae_mode == "soft" else hard, g))
    return rep
