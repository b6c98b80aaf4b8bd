"""Finite-difference gradient suite over every differentiable op, the blocks and the toy model."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from .core import functional as F
from .core import tensor as T
from .core.gradcheck import GradCheckResult, check_gradients
from .core.tensor import Tensor, tensor_mean, tensor_sum
from .encoder import SpatialReductionAttention
from .glim import GLIM
from .losses import LossWeights, total_loss, weighted_bce, weighted_iou
from .model import HiFiSeg, ModelConfig
from .sam import SAM

__all__ = ["OP_RTOL", "MODEL_RTOL", "MODEL_SAMPLES", "op_cases", "run_op_checks",
           "run_model_check", "run_suite", "corrupt_backward", "CORRUPTIBLE"]

OP_RTOL = 1e-3
MODEL_RTOL = 1e-2
MODEL_SAMPLES = 20
STEP = 1e-4

# ops whose backward rule can be deliberately broken for the negative control
CORRUPTIBLE = ("gelu", "sigmoid", "softmax", "layer_norm", "conv2d", "bilinear_resize", "matmul")

Case = Tuple[str, Callable[[], Tensor], List[Tensor]]


def _leaf(rng: np.random.Generator, shape, positive: bool = False) -> Tensor:
    a = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
    return Tensor(a.astype(np.float64), requires_grad=True)


def _randomized(module, rng: np.random.Generator, scale: float = 0.4):
    module.astype(np.float64)
    for p in module.parameters():
        p.data = rng.normal(scale=scale, size=p.shape)
    return module


def op_cases(rng: np.random.Generator) -> List[Case]:
    """Scalar-valued probes: each op's output is contracted with a fixed random tensor."""
    cases: List[Case] = []

    def probe(fn: Callable[[], Tensor], shape) -> Callable[[], Tensor]:
        r = Tensor(rng.normal(size=shape))
        return lambda: tensor_sum(fn() * r)

    a, b = _leaf(rng, (2, 3, 4, 4)), _leaf(rng, (1, 3, 1, 1))
    d = _leaf(rng, (2, 3, 4, 4), positive=True)
    s = (2, 3, 4, 4)
    cases += [
        ("add (broadcast)", probe(lambda: a + b, s), [a, b]),
        ("sub (broadcast)", probe(lambda: a - b, s), [a, b]),
        ("mul (broadcast)", probe(lambda: a * b, s), [a, b]),
        ("div", probe(lambda: a / d, s), [a, d]),
        ("neg", probe(lambda: -a, s), [a]),
    ]
    gate = _leaf(rng, (2, 3, 1, 1))
    cases.append(("hadamard", probe(lambda: T.hadamard(a, gate), s), [a, gate]))
    cases.append(("mean", lambda: tensor_mean(a * a), [a]))

    x = _leaf(rng, (2, 4, 6, 6))
    for label, c_out, k, stride, pad, groups in [
        ("conv2d 1x1", 3, 1, 1, 0, 1),
        ("conv2d 3x3", 3, 3, 1, 1, 1),
        ("conv2d 3x3 stride 2", 5, 3, 2, 1, 1),
        ("conv2d 4x4 stride 4", 3, 4, 4, 0, 1),
        ("conv2d grouped", 4, 3, 1, 1, 2),
        ("conv2d depthwise 5x5", 4, 5, 1, 2, 4),
    ]:
        w = _leaf(rng, (c_out, 4 // groups, k, k))
        bias = _leaf(rng, (1, c_out, 1, 1))
        h_out = (6 + 2 * pad - k) // stride + 1
        fn = (lambda w=w, bias=bias, stride=stride, pad=pad, groups=groups:
              F.conv2d(x, w, bias, stride=stride, padding=pad, groups=groups))
        cases.append((label, probe(fn, (2, c_out, h_out, h_out)), [x, w, bias]))

    cases.append(("gap2d", probe(lambda: F.gap2d(x), (2, 4, 1, 1)), [x]))
    cases.append(("split_channels", lambda: tensor_sum(F.split_channels(x, 4)[1] * F.split_channels(x, 4)[3]), [x]))
    c2 = _leaf(rng, (2, 2, 4, 4))
    cases.append(("concat_channels", probe(lambda: F.concat_channels([a, c2]), (2, 5, 4, 4)), [a, c2]))
    z = Tensor(rng.normal(scale=2.0, size=(2, 3, 4, 4)), requires_grad=True)
    cases += [
        ("sigmoid", probe(lambda: F.sigmoid(z), s), [z]),
        ("gelu", probe(lambda: F.gelu(z), s), [z]),
        ("softplus", probe(lambda: F.softplus(z), s), [z]),
    ]
    u, v = _leaf(rng, s), _leaf(rng, s)
    sg = Tensor(rng.uniform(0.05, 0.95, size=s), requires_grad=True)
    cases.append(("blend", probe(lambda: F.blend(u, v, sg), s), [u, v, sg]))
    img = _leaf(rng, (1, 2, 5, 7))
    cases.append(("bilinear_resize up", probe(lambda: F.bilinear_resize(img, 12, 9), (1, 2, 12, 9)), [img]))
    cases.append(("bilinear_resize down", probe(lambda: F.bilinear_resize(img, 3, 4), (1, 2, 3, 4)), [img]))

    tok = _leaf(rng, (2, 5, 3, 3))
    gamma, beta = _leaf(rng, (1, 5, 1, 1)), _leaf(rng, (1, 5, 1, 1))
    cases.append(("layer_norm", probe(lambda: F.layer_norm(tok, gamma, beta), (2, 5, 3, 3)), [tok, gamma, beta]))
    att = _leaf(rng, (2, 2, 4, 6))
    cases.append(("softmax", probe(lambda: F.softmax(att), (2, 2, 4, 6)), [att]))
    m1, m2 = _leaf(rng, (2, 2, 4, 3)), _leaf(rng, (2, 2, 3, 5))
    cases.append(("matmul", probe(lambda: F.matmul(m1, m2), (2, 2, 4, 5)), [m1, m2]))
    cases.append(("reshape", probe(lambda: F.reshape(tok, (2, 5, 9, 1)), (2, 5, 9, 1)), [tok]))
    cases.append(("permute", probe(lambda: F.permute(tok, (0, 2, 3, 1)), (2, 3, 3, 5)), [tok]))
    cases.append(("sum_axes", probe(lambda: F.sum_axes(tok, (1, 3)), (2, 1, 3, 1)), [tok]))

    g = (rng.random((2, 1, 6, 6)) > 0.5).astype(np.uint8)
    p1, p2 = _leaf(rng, (2, 1, 6, 6)), _leaf(rng, (2, 1, 6, 6))
    lw = LossWeights(boundary_kernel=3)
    cases += [
        ("weighted_bce", lambda: weighted_bce(p1, g), [p1]),
        ("weighted_iou", lambda: weighted_iou(p1, g), [p1]),
        ("total_loss", lambda: total_loss(p1, p2, g, lw)[0], [p1, p2]),
    ]

    glim = _randomized(GLIM(8, rng), rng)
    gx = _leaf(rng, (1, 8, 5, 5))
    cases.append(("GLIM block", probe(lambda: glim(gx), (1, 8, 5, 5)), [gx] + glim.parameters()))
    sam = _randomized(SAM(3, 6, 4, rng), rng)
    sx1, sx4 = _leaf(rng, (1, 3, 4, 4)), _leaf(rng, (1, 6, 2, 2))
    cases.append(("SAM block", probe(lambda: sam(sx1, sx4), (1, 4, 4, 4)), [sx1, sx4] + sam.parameters()))
    sra = _randomized(SpatialReductionAttention(4, 2, 2, rng), rng, 0.3)
    ax = _leaf(rng, (1, 4, 4, 4))
    cases.append(("spatial-reduction attention", probe(lambda: sra(ax), (1, 4, 4, 4)), [ax] + sra.parameters()))
    return cases


def run_op_checks(seed: int = 0, rtol: float = OP_RTOL) -> List[GradCheckResult]:
    rng = np.random.default_rng(seed)
    return [check_gradients(fn, inputs, name=name, rtol=rtol, h=STEP) for name, fn, inputs in op_cases(rng)]


def run_model_check(seed: int = 0, n_samples: int = MODEL_SAMPLES, rtol: float = MODEL_RTOL,
                    cfg: Optional[ModelConfig] = None) -> GradCheckResult:
    """Toy model in float64: total loss w.r.t. ``n_samples`` randomly drawn parameter entries."""
    rng = np.random.default_rng(seed)
    cfg = cfg if cfg is not None else ModelConfig.toy()
    model = HiFiSeg(cfg, seed=seed).astype(np.float64)
    x = Tensor(rng.random((1, 3, 32, 32)))
    g = np.zeros((1, 1, 32, 32), dtype=np.uint8)
    g[..., 8:22, 10:26] = 1
    lw = LossWeights.for_resolution(32)

    def loss() -> Tensor:
        preds = model(x)
        return total_loss(preds.p1, preds.p2, g, lw)[0]

    return check_gradients(loss, model.parameters(), name="toy model end-to-end", rtol=rtol,
                           h=STEP, n_samples=n_samples, rng=rng)


def run_suite(seed: int = 0) -> List[GradCheckResult]:
    return run_op_checks(seed) + [run_model_check(seed)]


@contextlib.contextmanager
def corrupt_backward(op: str, factor: float = 1.05) -> Iterator[None]:
    """Temporarily scale the gradient produced by ``functional.<op>`` by ``factor``."""
    if op not in CORRUPTIBLE:
        raise ValueError(f"cannot corrupt {op!r}; choose from {CORRUPTIBLE}")
    original = getattr(F, op)

    def broken(*args, **kwargs):
        out = original(*args, **kwargs)
        rule = out._backward
        if rule is not None:
            out._backward = lambda g: tuple(None if r is None else r * factor for r in rule(g))
        return out

    setattr(F, op, broken)
    try:
        yield
    finally:
        setattr(F, op, original)
