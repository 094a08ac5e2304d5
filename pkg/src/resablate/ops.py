"""Forward and gradient primitives for the network.

All functions are pure in their tensor arguments. The two exceptions are
documented: ``batchnorm`` in train mode updates the running statistics of the
state it is given, and ``sgd_step`` mutates parameters and velocities in
place. Gradient functions take the same inputs as their forward op plus the
upstream gradient and recompute whatever intermediates they need, so no
opaque cache objects cross the API.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DegenerateBatchError, ShapeError
from .tensor import BatchNormState, ConvKernel, Tensor, ensure_finite


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_hw(h: int, w: int, kernel: ConvKernel) -> tuple[int, int]:
    """Spatial extents of conv2d output: floor((x + 2p - k)/s) + 1."""
    kh, kw = kernel.weights.shape[2:]
    s, p = kernel.stride, kernel.padding
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1
    return ho, wo


def _check_conv_shapes(x: Tensor, kernel: ConvKernel) -> tuple[int, int]:
    if x.shape[1] != kernel.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, kernel expects {kernel.in_channels}"
        )
    ho, wo = conv_output_hw(x.shape[2], x.shape[3], kernel)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"input {x.shape[2]}x{x.shape[3]} too small for kernel "
            f"{kernel.weights.shape[2]}x{kernel.weights.shape[3]} "
            f"with padding {kernel.padding}"
        )
    return ho, wo


def _im2col(x: np.ndarray, kernel: ConvKernel, ho: int, wo: int) -> np.ndarray:
    """Unfold padded input into a (b*ho*wo, cin*kh*kw) matrix."""
    kh, kw = kernel.weights.shape[2:]
    s, p = kernel.stride, kernel.padding
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    # windows: (b, cin, ho', wo', kh, kw) before stride subsampling
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    b, cin = x.shape[0], x.shape[1]
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * kh * kw)
    return np.ascontiguousarray(col)


def conv2d(x: Tensor, kernel: ConvKernel) -> Tensor:
    """2D cross-correlation with zero padding, no bias."""
    ho, wo = _check_conv_shapes(x, kernel)
    b = x.shape[0]
    cout = kernel.out_channels
    col = _im2col(x.data, kernel, ho, wo)
    w_mat = kernel.weights.reshape(cout, -1)
    out = col @ w_mat.T
    out = out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    return Tensor(ensure_finite(np.ascontiguousarray(out), "conv2d"))


def conv2d_grad(
    x: Tensor, kernel: ConvKernel, grad_out: Tensor
) -> tuple[Tensor, np.ndarray]:
    """Gradients of sum(conv2d(x, k) * grad_out) w.r.t. input and weights."""
    ho, wo = _check_conv_shapes(x, kernel)
    if grad_out.shape != (x.shape[0], kernel.out_channels, ho, wo):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != conv output "
            f"{(x.shape[0], kernel.out_channels, ho, wo)}"
        )
    b, cin, h, w = x.shape
    cout = kernel.out_channels
    kh, kw = kernel.weights.shape[2:]
    s, p = kernel.stride, kernel.padding

    col = _im2col(x.data, kernel, ho, wo)
    g = np.ascontiguousarray(grad_out.data.transpose(0, 2, 3, 1)).reshape(-1, cout)
    grad_w = (g.T @ col).reshape(kernel.weights.shape)

    grad_col = g @ kernel.weights.reshape(cout, -1)
    grad_col = grad_col.reshape(b, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    grad_xp = np.zeros((b, cin, h + 2 * p, w + 2 * p), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            grad_xp[:, :, i : i + ho * s : s, j : j + wo * s : s] += grad_col[
                :, :, :, :, i, j
            ]
    grad_x = grad_xp[:, :, p : p + h, p : p + w] if p else grad_xp
    ensure_finite(grad_w, "conv2d_grad")
    return Tensor(ensure_finite(np.ascontiguousarray(grad_x), "conv2d_grad")), grad_w


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def _ch(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1)


def batchnorm(x: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes by (biased) batch statistics, applies the affine
    (gamma, beta), and folds the batch statistics into the running estimates:
    running <- (1 - momentum) * running + momentum * batch. Eval mode uses the
    running statistics only and leaves the state untouched.
    """
    if mode not in ("train", "eval"):
        raise ShapeError(f"unknown batchnorm mode {mode!r}")
    if x.shape[1] != state.channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, batch-norm state has {state.channels}"
        )
    if mode == "train":
        b, _, h, w = x.shape
        if b * h * w < 2:
            raise DegenerateBatchError(
                "train-mode batch norm needs at least 2 values per channel"
            )
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean[:] = (1 - m) * state.running_mean + m * mean
        state.running_var[:] = (1 - m) * state.running_var + m * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + np.asarray(state.epsilon, dtype=x.dtype))
    out = _ch(state.gamma) * ((x.data - _ch(mean)) * _ch(inv)) + _ch(state.beta)
    return Tensor(ensure_finite(out.astype(x.dtype, copy=False), "batchnorm"))


def batchnorm_grad(
    x: Tensor, state: BatchNormState, grad_out: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Train-mode gradients w.r.t. input, gamma, beta.

    Recomputes the batch statistics from ``x``; does not touch the running
    estimates.
    """
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input {x.shape}")
    if x.shape[1] != state.channels:
        raise ShapeError("channel mismatch between input and batch-norm state")
    b, _, h, w = x.shape
    n = b * h * w
    if n < 2:
        raise DegenerateBatchError(
            "train-mode batch norm needs at least 2 values per channel"
        )
    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + np.asarray(state.epsilon, dtype=x.dtype))
    xhat = (x.data - _ch(mean)) * _ch(inv)
    g = grad_out.data
    grad_beta = g.sum(axis=(0, 2, 3))
    grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
    grad_x = (_ch(state.gamma * inv) / n) * (
        n * g - _ch(grad_beta) - xhat * _ch(grad_gamma)
    )
    ensure_finite(grad_gamma, "batchnorm_grad")
    ensure_finite(grad_beta, "batchnorm_grad")
    return (
        Tensor(ensure_finite(grad_x.astype(x.dtype, copy=False), "batchnorm_grad")),
        grad_gamma,
        grad_beta,
    )


def bn_zero_response(state: BatchNormState, dtype=np.float32) -> np.ndarray:
    """Per-channel constant an eval-mode BN produces on an all-zero input.

    This is the constant an ablated branch collapses to:
    beta - gamma * running_mean / sqrt(running_var + epsilon). Computed by
    literally evaluating the BN so it is bitwise identical to the forward path.
    """
    zero = Tensor.zeros((1, state.channels, 1, 1), dtype=dtype)
    return batchnorm(zero, state, "eval").data[0, :, 0, 0].copy()


# ---------------------------------------------------------------------------
# pointwise and head primitives
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    return Tensor(ensure_finite(np.maximum(x.data, 0), "relu"))


def relu_grad(x: Tensor, grad_out: Tensor) -> Tensor:
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input {x.shape}")
    return Tensor(grad_out.data * (x.data > 0))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor(ensure_finite(out.astype(x.dtype, copy=False), "sigmoid"))


def sigmoid_grad(x: Tensor, grad_out: Tensor) -> Tensor:
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input {x.shape}")
    s = sigmoid(x).data
    return Tensor(ensure_finite((grad_out.data * s * (1 - s)).astype(x.dtype, copy=False), "sigmoid_grad"))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial extents, keeping a (b, c, 1, 1) shape."""
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return Tensor(ensure_finite(out.astype(x.dtype, copy=False), "global_avg_pool"))


def global_avg_pool_grad(x: Tensor, grad_out: Tensor) -> Tensor:
    b, c, h, w = x.shape
    if grad_out.shape != (b, c, 1, 1):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(b, c, 1, 1)}")
    g = np.broadcast_to(grad_out.data / (h * w), x.shape)
    return Tensor(np.ascontiguousarray(g))


def fully_connected(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """(b, f) @ (k, f)^T + (k,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"fully_connected shapes incompatible: x {x.shape}, weight {weight.shape}"
        )
    return ensure_finite(x @ weight.T + bias, "fully_connected")


def fully_connected_grad(
    x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != {(x.shape[0], weight.shape[0])}"
        )
    grad_x = grad_out @ weight
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    ensure_finite(grad_w, "fully_connected_grad")
    return grad_x, grad_w, grad_b


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Duplicate each pixel into a 2x2 block."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return Tensor(out)


def upsample_nearest2x_grad(x: Tensor, grad_out: Tensor) -> Tensor:
    b, c, h, w = x.shape
    if grad_out.shape != (b, c, 2 * h, 2 * w):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(b, c, 2 * h, 2 * w)}")
    g = grad_out.data.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))
    return Tensor(ensure_finite(g.astype(x.dtype, copy=False), "upsample_nearest2x_grad"))


# ---------------------------------------------------------------------------
# losses and metrics
# ---------------------------------------------------------------------------

def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross entropy over the batch, with gradient (softmax - onehot) / batch."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"labels must lie in [0, {k}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(p[np.arange(b), labels])))
    grad = p.copy()
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    ensure_finite(grad, "softmax_cross_entropy")
    if not np.isfinite(loss):
        raise DataError("softmax cross entropy diverged")
    return loss, grad.astype(logits.dtype, copy=False)


def dice_coefficient(pred_mask, true_mask) -> float:
    """2|A∩B| / (|A| + |B|) for binary masks; 1.0 when both masks are empty."""
    a = pred_mask.data if isinstance(pred_mask, Tensor) else np.asarray(pred_mask)
    b = true_mask.data if isinstance(true_mask, Tensor) else np.asarray(true_mask)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    for m in (a, b):
        if not np.isin(m, (0, 1)).all():
            raise DataError("dice masks must be binary (0/1)")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * (a * b).sum() / denom)


def soft_dice_loss(pred_prob, true_mask) -> tuple[float, np.ndarray]:
    """1 - (2*sum(p*q) + s) / (sum(p) + sum(q) + s) with smoothing s = 1.

    Gradient is with respect to pred_prob. Sums run over the whole tensor.
    """
    p = pred_prob.data if isinstance(pred_prob, Tensor) else np.asarray(pred_prob)
    q = true_mask.data if isinstance(true_mask, Tensor) else np.asarray(true_mask)
    if p.shape != q.shape:
        raise ShapeError(f"shapes differ: {p.shape} vs {q.shape}")
    if p.min() < 0 or p.max() > 1:
        raise DataError("pred_prob must lie in [0, 1]")
    s = 1.0
    q = q.astype(p.dtype, copy=False)
    inter = float((p * q).sum())
    total = float(p.sum() + q.sum())
    loss = 1.0 - (2.0 * inter + s) / (total + s)
    # d/dp of -(2*sum(pq)+s)/(sum(p)+sum(q)+s) by the quotient rule
    denom = total + s
    grad = (-2.0 * q * denom + (2.0 * inter + s)) / (denom * denom)
    ensure_finite(grad, "soft_dice_loss")
    return float(loss), grad.astype(p.dtype, copy=False)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def sgd_step(params, grads, velocities, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """One SGD update, in place:

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

    ``params`` and ``velocities`` are mutated; nothing else is touched.
    """
    if not (len(params) == len(grads) == len(velocities)):
        raise ShapeError("params, grads, velocities must have equal lengths")
    for p, g, v in zip(params, grads, velocities):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"parameter/grad/velocity shape mismatch: "
                             f"{p.shape}/{g.shape}/{v.shape}")
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v
