"""Oracle-grade reference implementations.

Deliberately slow, loop-level code kept independent of the vectorized engine
so tests can check one against the other. Nothing here is used on the
training or sweep paths.
"""

from __future__ import annotations

import numpy as np

from .ops import _check_conv_shapes
from .tensor import ConvKernel, Tensor


def conv2d_naive(x: Tensor, kernel: ConvKernel) -> Tensor:
    """Direct seven-loop convolution, the test oracle for conv2d."""
    ho, wo = _check_conv_shapes(x, kernel)
    b, cin, h, w = x.shape
    cout = kernel.out_channels
    kh, kw = kernel.weights.shape[2:]
    s, p = kernel.stride, kernel.padding
    xd = x.data
    wd = kernel.weights
    out = np.zeros((b, cout, ho, wo), dtype=np.promote_types(xd.dtype, wd.dtype))
    for n in range(b):
        for co in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(kh):
                            iy = oy * s + ky - p
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * s + kx - p
                                if ix < 0 or ix >= w:
                                    continue
                                acc += float(xd[n, ci, iy, ix]) * float(wd[co, ci, ky, kx])
                    out[n, co, oy, ox] = acc
    return Tensor(out.astype(xd.dtype, copy=False))


def batchnorm_eval_naive(x: Tensor, gamma, beta, mean, var, eps: float) -> Tensor:
    """Eval-mode BN written as an explicit per-element loop."""
    out = np.empty_like(x.data)
    b, c, h, w = x.shape
    for n in range(b):
        for k in range(c):
            a = float(gamma[k]) / float(np.sqrt(var[k] + eps))
            o = float(beta[k]) - a * float(mean[k])
            for i in range(h):
                for j in range(w):
                    out[n, k, i, j] = a * float(x.data[n, k, i, j]) + o
    return Tensor(out)


def numerical_gradient(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1.0) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
