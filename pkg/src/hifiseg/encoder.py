"""PVT-lite: a four-stage pyramid transformer with spatial-reduction attention.

Stage ``i`` (0-based) works at 1/2^(i+2) of the input resolution with
``channels[i]`` features. Token mixing inside each block uses a 3x3 depthwise
convolution in the feed-forward path, so no fixed-size position table is
needed and any input divisible by 32 is accepted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import functional as F
from .core.nn import Conv2d, LayerNorm, Module
from .core.tensor import DimensionError, Tensor

__all__ = [
    "EncoderConfig",
    "FeaturePyramid",
    "OverlapPatchEmbed",
    "SpatialReductionAttention",
    "MixFFN",
    "TransformerBlock",
    "PyramidEncoder",
    "patch_embed",
    "encoder_forward",
]

PATCH_STRIDES = (4, 2, 2, 2)


@dataclass
class EncoderConfig:
    channels: Tuple[int, int, int, int] = (64, 128, 320, 512)
    depths: Tuple[int, int, int, int] = (2, 2, 2, 2)
    heads: Tuple[int, int, int, int] = (1, 2, 4, 8)
    sr_ratios: Tuple[int, int, int, int] = (8, 4, 2, 1)
    mlp_ratios: Tuple[int, int, int, int] = (4, 4, 4, 4)
    in_channels: int = 3
    patch_strides: Tuple[int, int, int, int] = field(default=PATCH_STRIDES)

    def __post_init__(self):
        for name in ("channels", "depths", "heads", "sr_ratios", "mlp_ratios", "patch_strides"):
            value = tuple(int(v) for v in getattr(self, name))
            if len(value) != 4:
                raise ValueError(f"EncoderConfig.{name} needs 4 entries, got {len(value)}")
            setattr(self, name, value)
        if self.patch_strides != PATCH_STRIDES:
            raise ValueError(f"patch_strides are fixed at {PATCH_STRIDES}")
        for i, (c, h) in enumerate(zip(self.channels, self.heads)):
            if h < 1 or c % h:
                raise ValueError(f"stage {i + 1}: channels {c} not divisible by heads {h}")
        if min(self.depths) < 1 or min(self.sr_ratios) < 1 or min(self.mlp_ratios) < 1:
            raise ValueError("depths, sr_ratios and mlp_ratios must be positive")

    @classmethod
    def base(cls, **overrides) -> "EncoderConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "EncoderConfig":
        kw = dict(channels=(8, 16, 24, 32))
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class FeaturePyramid:
    x1: Tensor
    x2: Tensor
    x3: Tensor
    x4: Tensor

    def as_list(self) -> List[Tensor]:
        return [self.x1, self.x2, self.x3, self.x4]

    def shapes(self) -> List[Tuple[int, int, int, int]]:
        return [t.shape for t in self.as_list()]


class OverlapPatchEmbed(Module):
    """Strided convolution (k=7 for stride 4, k=3 for stride 2) then per-token LayerNorm."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator):
        k = 7 if stride == 4 else 3
        self.proj = Conv2d(c_in, c_out, k, stride=stride, padding=k // 2, rng=rng)
        self.norm = LayerNorm(c_out)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        for axis, size in (("H", x.shape[2]), ("W", x.shape[3])):
            if size % self.stride:
                raise DimensionError("patch_embed", axis, f"multiple of {self.stride}", size)
        return self.norm(self.proj(x))


def patch_embed(x: Tensor, stride: int, c_out: int, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Functional form with freshly initialised weights (mostly useful for shape checks)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return OverlapPatchEmbed(x.shape[1], c_out, stride, rng)(x)


class SpatialReductionAttention(Module):
    """Multi-head attention whose keys/values come from an ``sr``-times downsampled map."""

    def __init__(self, channels: int, heads: int, sr: int, rng: np.random.Generator):
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.sr = sr
        self.scale = (channels // heads) ** -0.5
        self.q = Conv2d(channels, channels, 1, rng=rng, init="trunc_normal")
        self.k = Conv2d(channels, channels, 1, rng=rng, init="trunc_normal")
        self.v = Conv2d(channels, channels, 1, rng=rng, init="trunc_normal")
        self.proj = Conv2d(channels, channels, 1, rng=rng, init="trunc_normal")
        if sr > 1:
            self.reduce = Conv2d(channels, channels, sr, stride=sr, rng=rng)
            self.reduce_norm = LayerNorm(channels)
        else:
            self.reduce = None
            self.reduce_norm = None

    def _check(self, x: Tensor) -> None:
        c, h, w = x.shape[1:]
        if c % self.heads:
            raise DimensionError("sra_block", "C", f"multiple of heads={self.heads}", c)
        for axis, size in (("H", h), ("W", w)):
            if size % self.sr:
                raise DimensionError("sra_block", axis, f"multiple of sr={self.sr}", size)

    def _qkv(self, x: Tensor):
        n, c, h, w = x.shape
        d = c // self.heads
        q = F.permute(F.reshape(self.q(x), (n, self.heads, d, h * w)), (0, 1, 3, 2))
        xr = self.reduce_norm(self.reduce(x)) if self.reduce is not None else x
        lr = xr.shape[2] * xr.shape[3]
        k_t = F.reshape(self.k(xr), (n, self.heads, d, lr))
        v = F.permute(F.reshape(self.v(xr), (n, self.heads, d, lr)), (0, 1, 3, 2))
        return q, k_t, v

    def attention_weights(self, x: Tensor) -> Tensor:
        """Softmax attention matrix of shape (N, heads, H*W, reduced tokens)."""
        self._check(x)
        q, k_t, _ = self._qkv(x)
        return F.softmax(F.matmul(q, k_t) * self.scale)

    def forward(self, x: Tensor) -> Tensor:
        self._check(x)
        n, c, h, w = x.shape
        q, k_t, v = self._qkv(x)
        attn = F.softmax(F.matmul(q, k_t) * self.scale)
        out = F.permute(F.matmul(attn, v), (0, 1, 3, 2))
        return self.proj(F.reshape(out, (n, c, h, w)))


class MixFFN(Module):
    def __init__(self, channels: int, ratio: int, rng: np.random.Generator):
        hidden = channels * ratio
        self.fc1 = Conv2d(channels, hidden, 1, rng=rng, init="trunc_normal")
        self.dw = Conv2d(hidden, hidden, 3, padding=1, groups=hidden, rng=rng)
        self.fc2 = Conv2d(hidden, channels, 1, rng=rng, init="trunc_normal")

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.dw(self.fc1(x))))


class TransformerBlock(Module):
    def __init__(self, channels: int, heads: int, sr: int, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(channels)
        self.attn = SpatialReductionAttention(channels, heads, sr, rng)
        self.norm2 = LayerNorm(channels)
        self.mlp = MixFFN(channels, mlp_ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class _Stage(Module):
    def __init__(self, c_in: int, c_out: int, stride: int, depth: int, heads: int, sr: int,
                 mlp_ratio: int, rng: np.random.Generator):
        self.embed = OverlapPatchEmbed(c_in, c_out, stride, rng)
        self.blocks = [TransformerBlock(c_out, heads, sr, mlp_ratio, rng) for _ in range(depth)]
        self.norm = LayerNorm(c_out)

    def forward(self, x: Tensor) -> Tensor:
        x = self.embed(x)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class PyramidEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        c_prev = cfg.in_channels
        self.stages = []
        for i in range(4):
            self.stages.append(_Stage(c_prev, cfg.channels[i], cfg.patch_strides[i], cfg.depths[i],
                                      cfg.heads[i], cfg.sr_ratios[i], cfg.mlp_ratios[i], rng))
            c_prev = cfg.channels[i]

    def forward(self, x: Tensor) -> FeaturePyramid:
        if x.shape[1] != self.cfg.in_channels:
            raise DimensionError("encoder_forward", "C", self.cfg.in_channels, x.shape[1])
        for axis, size in (("H", x.shape[2]), ("W", x.shape[3])):
            if size % 32:
                raise DimensionError("encoder_forward", axis, "multiple of 32", size)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return FeaturePyramid(*feats)


def encoder_forward(x: Tensor, encoder: PyramidEncoder) -> FeaturePyramid:
    return encoder(x)
