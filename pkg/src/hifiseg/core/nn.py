"""Parameter containers: a minimal module tree plus the layers the network needs."""

from __future__ import annotations

from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor, default_dtype

__all__ = [
    "Module",
    "Conv2d",
    "ConvParams",
    "LayerNorm",
    "DepthwiseSeparable",
    "depthwise_separable",
    "trunc_normal",
]


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=None) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall inside +-2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype or default_dtype())


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, arr in state.items():
            if name not in own:
                continue
            p = own[name]
            if p.shape != tuple(arr.shape):
                raise ValueError(f"shape mismatch for {name}: {p.shape} vs {tuple(arr.shape)}")
            p.data = np.asarray(arr, dtype=p.dtype).copy()

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class Conv2d(Module):
    """Convolution parameters: weight (C_out, C_in/groups, k, k), bias (1, C_out, 1, 1).

    ``init`` is ``"fan_out"`` (He normal on output fan, for spatial kernels) or
    ``"trunc_normal"`` (std 0.02, for projection-like 1x1 layers).
    """

    def __init__(self, c_in: int, c_out: int, kernel_size: int = 1, stride: int = 1,
                 padding: int = 0, groups: int = 1, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, init: str = "fan_out"):
        if c_in % groups or c_out % groups:
            raise ValueError(f"channels ({c_in}, {c_out}) not divisible by groups={groups}")
        if stride < 1 or padding < 0:
            raise ValueError("stride must be positive and padding non-negative")
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (c_out, c_in // groups, kernel_size, kernel_size)
        if init == "trunc_normal":
            w = trunc_normal(rng, shape)
        elif init == "fan_out":
            fan_out = kernel_size * kernel_size * c_out // groups
            w = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_out)).astype(default_dtype())
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = _param(w)
        self.bias = _param(np.zeros((1, c_out, 1, 1), dtype=default_dtype())) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


ConvParams = Conv2d


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        self.gamma = _param(np.ones((1, channels, 1, 1), dtype=default_dtype()))
        self.beta = _param(np.zeros((1, channels, 1, 1), dtype=default_dtype()))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


def depthwise_separable(x: Tensor, depthwise: Conv2d, pointwise: Optional[Conv2d] = None) -> Tensor:
    """Depthwise ``k x k`` convolution with 'same' padding, optionally followed by a 1x1 mix."""
    k = depthwise.kernel_size
    if k % 2 == 0:
        raise ValueError(f"depthwise_separable: kernel size must be odd, got {k}")
    out = F.conv2d(x, depthwise.weight, depthwise.bias, stride=1, padding=(k - 1) // 2,
                   groups=x.shape[1])
    if pointwise is not None:
        out = pointwise(out)
    return out


class DepthwiseSeparable(Module):
    """Shape-preserving depthwise conv (odd ``k``), pointwise stage optional."""

    def __init__(self, channels: int, k: int, pointwise: bool = False,
                 rng: Optional[np.random.Generator] = None):
        if k % 2 == 0 or k < 1:
            raise ValueError(f"kernel size must be odd and positive, got {k}")
        self.depthwise = Conv2d(channels, channels, k, padding=(k - 1) // 2, groups=channels, rng=rng)
        self.pointwise = Conv2d(channels, channels, 1, rng=rng) if pointwise else None

    def forward(self, x: Tensor) -> Tensor:
        return depthwise_separable(x, self.depthwise, self.pointwise)
