"""Cross-checks against PyTorch when it is installed (reference only, not a dependency)."""

import numpy as np
import pytest

from hifiseg.core import functional as F
from hifiseg.core.tensor import Tensor, backward, tensor_sum

torch = pytest.importorskip("torch")
tF = torch.nn.functional


@pytest.mark.parametrize("k,stride,pad,groups", [(1, 1, 0, 1), (3, 1, 1, 1), (7, 4, 3, 1), (3, 2, 1, 2), (5, 1, 2, 4)])
def test_conv2d_forward_backward(rng, k, stride, pad, groups):
    x = rng.normal(size=(2, 4, 9, 9))
    w = rng.normal(size=(4, 4 // groups, k, k))
    b = rng.normal(size=(1, 4, 1, 1))
    xt, wt, bt = (Tensor(a.copy(), requires_grad=True) for a in (x, w, b))
    out = F.conv2d(xt, wt, bt, stride=stride, padding=pad, groups=groups)
    probe = rng.normal(size=out.shape)
    backward(tensor_sum(out * probe))

    xr, wr, br = (torch.tensor(a, requires_grad=True) for a in (x, w, b.reshape(-1)))
    ref = tF.conv2d(xr, wr, br, stride=stride, padding=pad, groups=groups)
    (ref * torch.tensor(probe)).sum().backward()
    np.testing.assert_allclose(out.data, ref.detach().numpy(), atol=1e-10)
    np.testing.assert_allclose(xt.grad, xr.grad.numpy(), atol=1e-10)
    np.testing.assert_allclose(wt.grad, wr.grad.numpy(), atol=1e-10)
    np.testing.assert_allclose(bt.grad.reshape(-1), br.grad.numpy(), atol=1e-10)


@pytest.mark.parametrize("size", [(16, 16), (11, 8), (3, 5), (2, 2)])
def test_bilinear_matches_align_corners_false(rng, size):
    x = rng.normal(size=(1, 2, 5, 7))
    ref = tF.interpolate(torch.tensor(x), size=size, mode="bilinear", align_corners=False).numpy()
    np.testing.assert_allclose(F.bilinear_resize(Tensor(x), *size).data, ref, atol=1e-12)


def test_layer_norm_and_gelu(rng):
    x = rng.normal(size=(2, 6, 3, 4))
    gamma, beta = rng.normal(size=(1, 6, 1, 1)), rng.normal(size=(1, 6, 1, 1))
    ours = F.layer_norm(Tensor(x), Tensor(gamma), Tensor(beta), eps=1e-6).data
    tok = torch.tensor(x).permute(0, 2, 3, 1)
    ref = tF.layer_norm(tok, (6,), torch.tensor(gamma.reshape(-1)), torch.tensor(beta.reshape(-1)), eps=1e-6)
    np.testing.assert_allclose(ours, ref.permute(0, 3, 1, 2).numpy(), atol=1e-10)
    np.testing.assert_allclose(F.gelu(Tensor(x)).data, tF.gelu(torch.tensor(x)).numpy(), atol=1e-12)
