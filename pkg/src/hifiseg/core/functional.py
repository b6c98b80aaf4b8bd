"""Differentiable operations on NCHW tensors.

Each function returns a new :class:`~hifiseg.core.tensor.Tensor` and, when
any input requires gradients, records an exact backward rule.
"""

from __future__ import annotations

import functools
from typing import List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import DimensionError, Tensor, make_result

__all__ = [
    "conv2d",
    "depthwise_conv2d",
    "gap2d",
    "split_channels",
    "concat_channels",
    "sigmoid",
    "gelu",
    "activation",
    "softplus",
    "blend",
    "bilinear_resize",
    "bilinear_matrix",
    "layer_norm",
    "softmax",
    "matmul",
    "reshape",
    "permute",
    "sum_axes",
]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


# -- convolution ------------------------------------------------------------

def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation with zero padding.

    ``weight`` has shape (C_out, C_in // groups, k, k) and ``bias`` (1, C_out, 1, 1).
    """
    n, c_in, h, w = x.shape
    c_out, c_per_group, kh, kw = weight.shape
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be non-negative, got {padding}")
    if groups < 1 or c_in % groups or c_out % groups:
        raise DimensionError("conv2d", "C", f"channels divisible by groups={groups}", (c_in, c_out))
    if c_per_group * groups != c_in:
        raise DimensionError("conv2d", "C", c_per_group * groups, c_in)
    if kh != kw:
        raise DimensionError("conv2d", "kernel", "square kernel", (kh, kw))
    if h + 2 * padding < kh:
        raise DimensionError("conv2d", "H", f">= {kh} after padding", h + 2 * padding)
    if w + 2 * padding < kw:
        raise DimensionError("conv2d", "W", f">= {kw} after padding", w + 2 * padding)
    if bias is not None and bias.shape != (1, c_out, 1, 1):
        raise DimensionError("conv2d", "C", (1, c_out, 1, 1), bias.shape)

    if kh == 1 and stride == 1 and padding == 0 and groups == 1:
        out, bw = _conv1x1(x.data, weight.data)
    elif groups == c_in and c_per_group == 1 and c_out == c_in:
        out, bw = _conv_depthwise(x.data, weight.data, stride, padding)
    elif groups == 1:
        out, bw = _conv_dense(x.data, weight.data, stride, padding)
    else:
        out, bw = _conv_grouped(x.data, weight.data, stride, padding, groups)

    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)

        def _bw(g):
            gx, gw = bw(g)
            return gx, gw, g.sum(axis=(0, 2, 3), keepdims=True)
    else:
        parents = (x, weight)
        _bw = bw
    return make_result(out, parents, _bw)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    return conv2d(x, weight, bias, stride=stride, padding=padding, groups=x.shape[1])


def _conv1x1(x: np.ndarray, w: np.ndarray):
    n, c, h, wd = x.shape
    w2 = w.reshape(w.shape[0], c)
    xf = x.reshape(n, c, h * wd)
    out = np.matmul(w2, xf).reshape(n, w.shape[0], h, wd)

    def bw(g):
        gf = g.reshape(n, w.shape[0], h * wd)
        gx = np.matmul(w2.T, gf).reshape(x.shape)
        gw = np.einsum("noh,nch->oc", gf, xf, optimize=True).reshape(w.shape)
        return gx, gw

    return out, bw


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_dense(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    n, c, h, wd = x.shape
    k = w.shape[2]
    xp = _pad(x, padding)
    ho, wo = _conv_out(h, k, stride, padding), _conv_out(wd, k, stride, padding)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # im2col: (N, Ho, Wo, C, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    w2 = w.reshape(w.shape[0], -1)
    out = (cols @ w2.T).reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)

    def bw(g):
        gf = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, -1)
        gw = (gf.T @ cols).reshape(w.shape)
        gcols = (gf @ w2).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return _crop(gxp, padding), gw

    return np.ascontiguousarray(out), bw


def _conv_depthwise(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    n, c, h, wd = x.shape
    k = w.shape[2]
    xp = _pad(x, padding)
    ho, wo = _conv_out(h, k, stride, padding), _conv_out(wd, k, stride, padding)
    taps = w[:, 0]  # (C, k, k)
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x, w))
    for i in range(k):
        for j in range(k):
            out += taps[None, :, i, j, None, None] * xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]

    def bw(g):
        gw = np.empty_like(taps)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                gw[:, i, j] = np.einsum("nchw,nchw->c", g, xp[sl])
                gxp[sl] += taps[None, :, i, j, None, None] * g
        return _crop(gxp, padding), gw[:, None]

    return out, bw


def _conv_grouped(x: np.ndarray, w: np.ndarray, stride: int, padding: int, groups: int):
    c_in, c_out = x.shape[1], w.shape[0]
    gi, go = c_in // groups, c_out // groups
    parts = [_conv_dense(x[:, i * gi:(i + 1) * gi], w[i * go:(i + 1) * go], stride, padding) for i in range(groups)]
    out = np.concatenate([p[0] for p in parts], axis=1)

    def bw(g):
        gxs, gws = [], []
        for i, (_, pbw) in enumerate(parts):
            gx, gw = pbw(np.ascontiguousarray(g[:, i * go:(i + 1) * go]))
            gxs.append(gx)
            gws.append(gw)
        return np.concatenate(gxs, axis=1), np.concatenate(gws, axis=0)

    return out, bw


def _crop(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return a[:, :, p:-p, p:-p]


# -- pooling / channel plumbing ----------------------------------------------

def gap2d(x: Tensor) -> Tensor:
    """Global average pooling to (N, C, 1, 1)."""
    h, w = x.shape[2:]
    scale = 1.0 / (h * w)

    def _bw(g):
        return (np.broadcast_to(g * scale, x.shape).astype(x.dtype),)

    return make_result(x.data.mean(axis=(2, 3), keepdims=True), (x,), _bw)


def split_channels(x: Tensor, parts: int) -> List[Tensor]:
    c = x.shape[1]
    if parts < 1 or c % parts:
        raise DimensionError("split_channels", "C", f"multiple of {parts}", c)
    step = c // parts
    if parts == 1:
        return [x]
    outs = []
    for i in range(parts):
        lo, hi = i * step, (i + 1) * step

        def _bw(g, lo=lo, hi=hi):
            full = np.zeros(x.shape, dtype=g.dtype)
            full[:, lo:hi] = g
            return (full,)

        outs.append(make_result(x.data[:, lo:hi], (x,), _bw))
    return outs


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat_channels: empty input list")
    ref = xs[0].shape
    for t in xs[1:]:
        for idx, axis in ((0, "N"), (2, "H"), (3, "W")):
            if t.shape[idx] != ref[idx]:
                raise DimensionError("concat_channels", axis, ref[idx], t.shape[idx])
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def _bw(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))]

    return make_result(np.concatenate([t.data for t in xs], axis=1), tuple(xs), _bw)


# -- activations ------------------------------------------------------------

def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    z = x.data
    cdf = 0.5 * (1.0 + erf(z / _SQRT2))

    def _bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        return (g * (cdf + z * pdf),)

    return make_result((z * cdf).astype(z.dtype), (x,), _bw)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) in overflow-free form."""
    z = x.data
    out = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    return make_result(out, (x,), lambda g: (g * _stable_sigmoid(z),))


def blend(a: Tensor, b: Tensor, s: Tensor) -> Tensor:
    """Pointwise convex combination ``s*a + (1-s)*b`` for gates ``s`` in [0, 1].

    Evaluated from the nearer endpoint (``b + s*(a - b)`` for s < 0.5, else
    ``a - (1 - s)*(a - b)``) so s = 0 and s = 1 return b and a exactly, then
    clamped to ``[min(a, b), max(a, b)]`` to remove any remaining rounding overshoot.
    """
    for t, label in ((b, "b"), (s, "s")):
        if t.shape != a.shape:
            axis = next(("NCHW"[i] for i in range(4) if t.shape[i] != a.shape[i]), "rank")
            raise DimensionError(f"blend({label})", axis, a.shape, t.shape)
    av, bv, sv = a.data, b.data, s.data
    diff = av - bv
    raw = np.where(sv < 0.5, bv + sv * diff, av - (1.0 - sv) * diff)
    out = np.clip(raw, np.minimum(av, bv), np.maximum(av, bv))

    def _bw(g):
        return g * sv, g * (1.0 - sv), g * diff

    return make_result(out, (a, b, s), _bw)


# -- resampling ---------------------------------------------------------------

@functools.lru_cache(maxsize=256)
def _bilinear_matrix_cached(n_out: int, n_in: int) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    m.setflags(write=False)
    return m


def bilinear_matrix(n_out: int, n_in: int, dtype=np.float64) -> np.ndarray:
    """1-d linear interpolation weights, half-pixel centres (align_corners=False)."""
    return _bilinear_matrix_cached(int(n_out), int(n_in)).astype(dtype, copy=False)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output size must be positive, got {(out_h, out_w)}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x
    ry = bilinear_matrix(out_h, h, x.dtype)
    rx = bilinear_matrix(out_w, w, x.dtype)
    out = ry @ x.data @ rx.T

    def _bw(g):
        return (ry.T @ g @ rx,)

    return make_result(out, (x,), _bw)


# -- normalisation / attention helpers -----------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise each pixel's channel vector (per-token LayerNorm in NCHW)."""
    c = x.shape[1]
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise DimensionError("layer_norm", "C", (1, c, 1, 1), (gamma.shape, beta.shape))
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def _bw(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return (gx, (g * xhat).sum(axis=(0, 2, 3), keepdims=True), g.sum(axis=(0, 2, 3), keepdims=True))

    return make_result(out, (x, gamma, beta), _bw)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (x,), _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; leading axes must match."""
    if a.shape[:2] != b.shape[:2]:
        axis = "N" if a.shape[0] != b.shape[0] else "C"
        raise DimensionError("matmul", axis, a.shape[:2], b.shape[:2])
    if a.shape[3] != b.shape[2]:
        raise DimensionError("matmul", "inner", a.shape[3], b.shape[2])

    def _bw(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return make_result(a.data @ b.data, (a, b), _bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    if out.ndim != 4:
        raise DimensionError("reshape", "rank", 4, out.ndim)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                       lambda g: (g.transpose(inverse),))


def sum_axes(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Sum over ``axes`` keeping them as size-1 dimensions."""
    axes = tuple(axes)
    return make_result(x.data.sum(axis=axes, keepdims=True), (x,),
                       lambda g: (np.broadcast_to(g, x.shape).copy(),))
