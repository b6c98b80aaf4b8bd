import numpy as np
import pytest

from hifiseg.core.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(arr, dtype=np.float64):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Nested-loop reference convolution (cross-correlation, zero padding)."""
    n, c_in, h, wd = x.shape
    c_out, cpg, k, _ = w.shape
    xp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    opg = c_out // groups
    out = np.zeros((n, c_out, ho, wo))
    for bi in range(n):
        for o in range(c_out):
            grp = o // opg
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cpg):
                        for di in range(k):
                            for dj in range(k):
                                acc += w[o, ci, di, dj] * xp[bi, grp * cpg + ci, i * stride + di, j * stride + dj]
                    out[bi, o, i, j] = acc + (0.0 if b is None else b.reshape(-1)[o])
    return out


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail=""):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
