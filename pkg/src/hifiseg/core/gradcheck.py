"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward

__all__ = ["GradCheckResult", "numerical_grad", "check_gradients"]


@dataclass
class GradCheckResult:
    name: str
    n_checked: int
    max_abs_err: float
    max_rel_err: float
    rtol: float
    passed: bool

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<28} n={self.n_checked:<5d} max_abs={self.max_abs_err:.3e} "
                f"max_rel={self.max_rel_err:.3e} rtol={self.rtol:.0e} {status}")


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-4,
                   indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """d fn() / d t by central differences at the flat ``indices`` (all if None)."""
    if not t.data.flags.c_contiguous:
        t.data = np.ascontiguousarray(t.data)
    flat = t.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx), dtype=np.float64)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * h)
    return out


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], name: str = "op",
                    rtol: float = 1e-3, atol: float = 1e-8, h: float = 1e-4,
                    n_samples: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> GradCheckResult:
    """Compare analytic gradients of scalar ``fn()`` against finite differences.

    An entry passes when ``|analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|)``.
    With ``n_samples`` set, that many scalar coordinates are drawn uniformly
    across all ``inputs``; otherwise every coordinate is checked.
    """
    for t in inputs:
        t.grad = None
    backward(fn())
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs]

    if n_samples is None:
        picks = [(k, None) for k in range(len(inputs))]
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = np.array([t.size for t in inputs])
        flat_ids = rng.choice(int(sizes.sum()), size=min(n_samples, int(sizes.sum())), replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        by_input: dict = {}
        for fid in np.sort(flat_ids):
            k = int(np.searchsorted(offsets, fid, side="right") - 1)
            by_input.setdefault(k, []).append(int(fid - offsets[k]))
        picks = sorted(by_input.items())

    max_abs = max_rel = 0.0
    passed = True
    count = 0
    for k, idx in picks:
        t = inputs[k]
        num = numerical_grad(fn, t, h=h, indices=idx)
        ana = analytic[k].reshape(-1) if idx is None else analytic[k].reshape(-1)[idx]
        diff = np.abs(ana - num)
        scale = np.maximum(np.abs(ana), np.abs(num))
        bad = diff > atol + rtol * scale
        passed &= not bool(bad.any())
        max_abs = max(max_abs, float(diff.max(initial=0.0)))
        rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
        max_rel = max(max_rel, float(rel.max(initial=0.0)))
        count += diff.size
    for t in inputs:
        t.grad = None
    return GradCheckResult(name, count, max_abs, max_rel, rtol, passed)
