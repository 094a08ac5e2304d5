"""Core value types of the engine: dense rank-4 tensors, conv kernels, BN state.

Every activation in the network is a ``Tensor``: a contiguous
(batch, channel, height, width) float array with an optional gradient slot.
float32 is the working precision; float64 is used by the oracle and
gradient-check paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

SUPPORTED_DTYPES = (np.float32, np.float64)


def _as_engine_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


@dataclass
class Tensor:
    """Dense (batch, channel, height, width) array, optionally carrying a gradient."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = _as_engine_array(self.data)
        if self.data.ndim != 4:
            raise ShapeError(f"tensor must be rank 4, got shape {self.data.shape}")
        if self.grad is not None:
            self.grad = _as_engine_array(self.grad, dtype=self.data.dtype)
            if self.grad.shape != self.data.shape:
                raise ShapeError(
                    f"grad shape {self.grad.shape} != data shape {self.data.shape}"
                )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype))

    @classmethod
    def full(cls, shape, value, dtype=np.float32) -> "Tensor":
        return cls(np.full(shape, value, dtype=dtype))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())


@dataclass
class ConvKernel:
    """Weights of one convolution: (out_channels, in_channels, kH, kW).

    ``zeroed`` marks a kernel whose weights were deliberately replaced with
    exact zeros by the ablation machinery; the flag implies all-zero weights.
    """

    weights: np.ndarray
    stride: int = 1
    padding: int = 0
    zeroed: bool = False

    def __post_init__(self):
        self.weights = _as_engine_array(self.weights)
        if self.weights.ndim != 4:
            raise ShapeError(f"kernel must be rank 4, got shape {self.weights.shape}")
        kh, kw = self.weights.shape[2], self.weights.shape[3]
        if kh not in (1, 3) or kw not in (1, 3):
            raise ShapeError(f"kernel extents must be 1 or 3, got {kh}x{kw}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")
        if self.zeroed and np.any(self.weights):
            raise ShapeError("zeroed flag set on a kernel with non-zero weights")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ConvKernel":
        return ConvKernel(self.weights.copy(), self.stride, self.padding, self.zeroed)


@dataclass
class BatchNormState:
    """Per-channel batch-norm parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        self.gamma = _as_engine_array(self.gamma)
        self.beta = _as_engine_array(self.beta, dtype=self.gamma.dtype)
        self.running_mean = _as_engine_array(self.running_mean, dtype=self.gamma.dtype)
        self.running_var = _as_engine_array(self.running_var, dtype=self.gamma.dtype)
        arrays = (self.gamma, self.beta, self.running_mean, self.running_var)
        if any(a.ndim != 1 for a in arrays):
            raise ShapeError("batch-norm arrays must be one-dimensional")
        if len({a.shape[0] for a in arrays}) != 1:
            raise ShapeError("batch-norm arrays must share one channel count")
        if np.any(self.running_var < 0):
            raise ShapeError("running_var must be non-negative")
        if self.epsilon < 0:
            raise ShapeError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0 < self.momentum < 1:
            raise ShapeError(f"momentum must be in (0, 1), got {self.momentum}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    def copy(self) -> "BatchNormState":
        return BatchNormState(
            self.gamma.copy(),
            self.beta.copy(),
            self.running_mean.copy(),
            self.running_var.copy(),
            self.epsilon,
            self.momentum,
        )


def ensure_finite(arr: np.ndarray, op_name: str) -> np.ndarray:
    """Raise NumericError if arr contains NaN or Inf. Engine ops call this on exit."""
    if not np.isfinite(arr).all():
        raise NumericError(f"{op_name} produced non-finite values")
    return arr
