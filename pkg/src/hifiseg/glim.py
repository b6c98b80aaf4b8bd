"""Global-local interaction: four-branch grouped feature extraction with a GELU gate.

The input channels are split into four equal groups. Group 1 goes through a
1x1 convolution, groups 2 and 3 through 3x3 and 5x5 depthwise convolutions,
and group 4 is rescaled by a sigmoid of its own global average. The branch
outputs are concatenated, mixed by a 1x1 convolution, passed through GELU and
used to modulate the original input elementwise.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import functional as F
from .core.nn import Conv2d, Module, depthwise_separable
from .core.tensor import DimensionError, Tensor, hadamard
from .encoder import FeaturePyramid

__all__ = ["GlimParams", "GLIM", "glim_forward", "MultiLevelGLIM", "glim_multi_level"]


class GLIM(Module):
    """Parameters and forward pass of one interaction block.

    Args:
        channels: input (and output) width; must be a multiple of 4.
        conv_branches: if False, branches 1-3 become identities.
        gap_branch: if False, branch 4 is a 7x7 depthwise convolution instead
            of the pooled sigmoid gate.
        separable_branches: add a 1x1 pointwise stage after each depthwise branch.
    """

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None,
                 conv_branches: bool = True, gap_branch: bool = True,
                 separable_branches: bool = False):
        if channels % 4:
            raise ValueError(f"GLIM needs channels divisible by 4, got {channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        g = channels // 4
        self.channels = channels
        self.conv_branches = conv_branches
        self.gap_branch = gap_branch
        if conv_branches:
            self.conv1x1_b1 = Conv2d(g, g, 1, rng=rng)
            self.dw3x3 = Conv2d(g, g, 3, padding=1, groups=g, rng=rng)
            self.dw5x5 = Conv2d(g, g, 5, padding=2, groups=g, rng=rng)
            if separable_branches:
                self.pw3x3 = Conv2d(g, g, 1, rng=rng)
                self.pw5x5 = Conv2d(g, g, 1, rng=rng)
            else:
                self.pw3x3 = self.pw5x5 = None
        else:
            self.conv1x1_b1 = self.dw3x3 = self.dw5x5 = self.pw3x3 = self.pw5x5 = None
        self.dw7x7 = None if gap_branch else Conv2d(g, g, 7, padding=3, groups=g, rng=rng)
        self.fuse1x1 = Conv2d(channels, channels, 1, rng=rng)

    def branches(self, x: Tensor):
        """The four pre-fusion branch outputs."""
        x1, x2, x3, x4 = F.split_channels(x, 4)
        if self.conv_branches:
            x1 = self.conv1x1_b1(x1)
            x2 = depthwise_separable(x2, self.dw3x3, self.pw3x3)
            x3 = depthwise_separable(x3, self.dw5x5, self.pw5x5)
        if self.gap_branch:
            x4 = hadamard(x4, F.sigmoid(F.gap2d(x4)))
        else:
            x4 = depthwise_separable(x4, self.dw7x7)
        return x1, x2, x3, x4

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise DimensionError("glim_forward", "C", self.channels, x.shape[1])
        mixed = self.fuse1x1(F.concat_channels(self.branches(x)))
        return hadamard(F.gelu(mixed), x)


GlimParams = GLIM


def glim_forward(x: Tensor, p: GLIM) -> Tensor:
    return p(x)


class MultiLevelGLIM(Module):
    """GLIM on X2, X3, X4, upsample to the X2 grid, concatenate, fuse to ``out_channels``."""

    def __init__(self, channels: Sequence[int], out_channels: int,
                 rng: Optional[np.random.Generator] = None, **glim_kw):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.blocks = [GLIM(c, rng=rng, **glim_kw) for c in channels]
        self.fuse = Conv2d(sum(channels), out_channels, 1, rng=rng)

    def forward(self, feats: Sequence[Tensor]) -> Tensor:
        if len(feats) != len(self.blocks):
            raise DimensionError("glim_multi_level", "levels", len(self.blocks), len(feats))
        h, w = feats[0].shape[2:]
        outs = [F.bilinear_resize(blk(f), h, w) for blk, f in zip(self.blocks, feats)]
        return self.fuse(F.concat_channels(outs))


def glim_multi_level(pyramid: FeaturePyramid, module: MultiLevelGLIM) -> Tensor:
    return module([pyramid.x2, pyramid.x3, pyramid.x4])
