"""Full segmentation network, its configuration and the ablation variants."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .core import functional as F
from .core.nn import Conv2d, Module
from .core.tensor import DimensionError, Tensor, no_grad
from .encoder import EncoderConfig, PyramidEncoder
from .glim import MultiLevelGLIM
from .sam import SAM

__all__ = [
    "ModelConfig",
    "Predictions",
    "HiFiSeg",
    "VARIANTS",
    "build_model",
    "forward",
    "parameter_count",
    "infer_mask",
    "binarize",
]

# Toggle sets for the ablation rows; "full" is the complete network.
VARIANTS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "w/o GLIM": {"use_glim": False},
    "w/o SAM": {"use_sam": False},
    "w/o Conv": {"glim_conv_branches": False},
    "w/o GAP": {"glim_gap_branch": False},
}


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_width: int = 64
    sam_width: int = 32
    input_hw: int = 352
    use_glim: bool = True
    use_sam: bool = True
    glim_conv_branches: bool = True
    glim_gap_branch: bool = True
    separable_branches: bool = False

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if self.input_hw % 32:
            raise ValueError(f"input_hw must be a multiple of 32, got {self.input_hw}")
        if self.use_glim:
            for c in self.encoder.channels[1:]:
                if c % 4:
                    raise ValueError(f"GLIM levels need channels divisible by 4, got {c}")
        if self.decoder_width < 1 or self.sam_width < 1:
            raise ValueError("decoder_width and sam_width must be positive")

    @classmethod
    def base(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        kw = dict(encoder=EncoderConfig.toy(), decoder_width=16, sam_width=8, input_hw=64)
        kw.update(overrides)
        return cls(**kw)

    def variant(self, name: str) -> "ModelConfig":
        if name not in VARIANTS:
            raise KeyError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        return dataclasses.replace(self, **VARIANTS[name])

    @property
    def toggles(self) -> Dict[str, bool]:
        return {k: getattr(self, k) for k in ("use_glim", "use_sam", "glim_conv_branches", "glim_gap_branch")}

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        return cls(**d)


def binarize(logits: np.ndarray) -> np.ndarray:
    """1[sigmoid(logit) > 0.5] as uint8."""
    return (F._stable_sigmoid(np.asarray(logits)) > 0.5).astype(np.uint8)


@dataclass
class Predictions:
    p1: Tensor
    p2: Tensor

    @property
    def mask1(self) -> np.ndarray:
        return binarize(self.p1.data)

    @property
    def mask2(self) -> np.ndarray:
        return binarize(self.p2.data)

    def probabilities(self, head: str = "p1") -> np.ndarray:
        if head == "p1":
            return F._stable_sigmoid(self.p1.data)
        if head == "p2":
            return F._stable_sigmoid(self.p2.data)
        if head == "mean":
            return 0.5 * (F._stable_sigmoid(self.p1.data) + F._stable_sigmoid(self.p2.data))
        raise ValueError(f"unknown head {head!r}")


class HiFiSeg(Module):
    """Encoder, GLIM decoder stream (head P1) and SAM edge stream (head P2)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        enc = cfg.encoder
        self.encoder = PyramidEncoder(enc, rng)
        if cfg.use_glim:
            self.glim = MultiLevelGLIM(enc.channels[1:], cfg.decoder_width, rng=rng,
                                       conv_branches=cfg.glim_conv_branches,
                                       gap_branch=cfg.glim_gap_branch,
                                       separable_branches=cfg.separable_branches)
            self.head1 = Conv2d(cfg.decoder_width, 1, 1, rng=rng, init="trunc_normal")
        else:
            self.glim = None
            self.head1 = Conv2d(enc.channels[3], 1, 1, rng=rng, init="trunc_normal")
        self.sam = SAM(enc.channels[0], enc.channels[3], cfg.sam_width, rng=rng, selective=cfg.use_sam)
        self.head2 = Conv2d(cfg.sam_width, 1, 1, rng=rng, init="trunc_normal")

    def forward(self, x: Tensor) -> Predictions:
        if x.shape[1] != 3:
            raise DimensionError("forward", "C", 3, x.shape[1])
        h, w = x.shape[2:]
        pyr = self.encoder(x)
        if self.glim is not None:
            stream1 = self.glim([pyr.x2, pyr.x3, pyr.x4])
        else:
            stream1 = F.bilinear_resize(pyr.x4, *pyr.x2.shape[2:])
        p1 = F.bilinear_resize(self.head1(stream1), h, w)
        p2 = F.bilinear_resize(self.head2(self.sam(pyr.x1, pyr.x4)), h, w)
        return Predictions(p1, p2)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=None) -> HiFiSeg:
    model = HiFiSeg(cfg, seed=seed)
    if dtype is not None:
        model.astype(dtype)
    return model


def forward(x: Tensor, model: HiFiSeg) -> Predictions:
    return model(x)


def parameter_count(cfg: ModelConfig) -> int:
    return HiFiSeg(cfg).num_parameters()


def infer_mask(x: Tensor, model: HiFiSeg, head: str = "p1") -> np.ndarray:
    """Binary mask from the chosen head (``p1``, ``p2`` or ``mean`` of probabilities)."""
    with no_grad():
        preds = model(x)
    return (preds.probabilities(head) > 0.5).astype(np.uint8)
