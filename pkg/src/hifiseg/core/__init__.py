from . import functional
from .functional import (
    activation,
    bilinear_resize,
    concat_channels,
    conv2d,
    gap2d,
    gelu,
    sigmoid,
    split_channels,
)
from .gradcheck import GradCheckResult, check_gradients, numerical_grad
from .nn import Conv2d, ConvParams, DepthwiseSeparable, LayerNorm, Module, depthwise_separable
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    DimensionError,
    NonFiniteError,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    hadamard,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "functional",
    "activation",
    "bilinear_resize",
    "concat_channels",
    "conv2d",
    "gap2d",
    "gelu",
    "sigmoid",
    "split_channels",
    "GradCheckResult",
    "check_gradients",
    "numerical_grad",
    "Conv2d",
    "ConvParams",
    "DepthwiseSeparable",
    "LayerNorm",
    "Module",
    "depthwise_separable",
    "AdamW",
    "AdamWState",
    "adamw_step",
    "DimensionError",
    "NonFiniteError",
    "Tensor",
    "as_tensor",
    "backward",
    "default_dtype",
    "hadamard",
    "no_grad",
    "set_default_dtype",
]
