"""Selective aggregation of a shallow (fine) and a deep (coarse) feature map.

Both inputs are projected to a common width on the shallow grid, a per-pixel,
per-channel gate ``s = sigmoid(g1(a) + g2(b))`` is formed and the output is
the convex blend ``s * a + (1 - s) * b``.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .core import functional as F
from .core.nn import Conv2d, Module
from .core.tensor import DimensionError, Tensor

__all__ = ["SamParams", "SAM", "sam_align", "sam_forward", "sam_gate"]


class SAM(Module):
    """Projection and gate parameters.

    With ``selective=False`` the gate convolutions are omitted and the two
    projected maps are simply added.
    """

    def __init__(self, c_shallow: int, c_deep: int, width: int,
                 rng: Optional[np.random.Generator] = None, selective: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.width = width
        self.selective = selective
        self.proj_shallow = Conv2d(c_shallow, width, 1, rng=rng)
        self.proj_deep = Conv2d(c_deep, width, 1, rng=rng)
        if selective:
            self.gate_shallow = Conv2d(width, width, 1, rng=rng)
            self.gate_deep = Conv2d(width, width, 1, rng=rng)
        else:
            self.gate_shallow = self.gate_deep = None

    def align(self, x1: Tensor, x4: Tensor) -> Tuple[Tensor, Tensor]:
        return sam_align(x1, x4, self)

    def forward(self, x1: Tensor, x4: Tensor) -> Tensor:
        s1, s4 = self.align(x1, x4)
        if not self.selective:
            return s1 + s4
        return sam_forward(s1, s4, self)


SamParams = SAM


def sam_align(x1: Tensor, x4: Tensor, p: SAM) -> Tuple[Tensor, Tensor]:
    """Project the shallow map, upsample the deep map to the shallow grid and project it."""
    if x1.shape[0] != x4.shape[0]:
        raise DimensionError("sam_align", "N", x1.shape[0], x4.shape[0])
    h, w = x1.shape[2:]
    if h < x4.shape[2] or w < x4.shape[3]:
        raise DimensionError("sam_align", "H", f">= {x4.shape[2]} (shallow grid finer than deep)", h)
    return p.proj_shallow(x1), p.proj_deep(F.bilinear_resize(x4, h, w))


def sam_gate(s1: Tensor, s4: Tensor, p: SAM) -> Tensor:
    return F.sigmoid(p.gate_shallow(s1) + p.gate_deep(s4))


def sam_forward(s1: Tensor, s4: Tensor, p: SAM) -> Tensor:
    if s1.shape != s4.shape:
        axis = next("NCHW"[i] for i in range(4) if s1.shape[i] != s4.shape[i])
        raise DimensionError("sam_forward", axis, s1.shape, s4.shape)
    gate = sam_gate(s1, s4, p)
    return F.blend(s1, s4, gate)
