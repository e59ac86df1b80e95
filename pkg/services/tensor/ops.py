"""
Tensor Ops - Forward and backward kernels
Version: 1.0

Pure functions over numpy arrays in row-major H x W x C layout.
Every kernel accepts a single sample (H, W, C) or a batch (N, H, W, C);
the dtype of the input is preserved (float32 in training, float64 for
gradient checks).

Conventions:
- "same" padding pads with zeros, extra pad going to the bottom/right.
- Bilinear resampling uses half-pixel centers with edge clamping.
- Layer norm uses the biased (population) variance.
"""

from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from services.errors import ContractViolationError


DEFAULT_LEAKY_SLOPE = 0.02
DEFAULT_LN_EPSILON = 1e-5


# ============================================================================
# HELPERS
# ============================================================================

def _batched(x: np.ndarray, rank: int, op: str) -> Tuple[np.ndarray, bool]:
    """Return (batched view, was_single) for a sample of the given rank."""
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ContractViolationError(
        f"{op}: expected rank {rank} or {rank + 1} input, got shape {x.shape}"
    )


def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """Output size and (before, after) zero padding for 'same' convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return out, before, total - before


def _conv_geometry(h: int, w: int, k: int, stride: int, padding: str):
    if padding == "same":
        ho, top, bottom = same_padding(h, k, stride)
        wo, left, right = same_padding(w, k, stride)
    elif padding == "valid":
        ho = (h - k) // stride + 1
        wo = (w - k) // stride + 1
        top = bottom = left = right = 0
        if ho < 1 or wo < 1:
            raise ContractViolationError(
                f"conv2d: kernel {k} larger than valid input {h}x{w}"
            )
    else:
        raise ContractViolationError(f"conv2d: unknown padding '{padding}'")
    return ho, wo, (top, bottom, left, right)


def _check_conv_args(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int) -> None:
    if kernel.ndim != 4:
        raise ContractViolationError(f"conv2d: kernel must be k x k x Cin x Cout, got {kernel.shape}")
    k, k2, cin, cout = kernel.shape
    if k != k2:
        raise ContractViolationError(f"conv2d: kernel height {k} != kernel width {k2}")
    if k % 2 == 0:
        raise ContractViolationError(f"conv2d: kernel size must be odd, got {k}")
    if x.shape[-1] != cin:
        raise ContractViolationError(
            f"conv2d: input channels {x.shape[-1]} != kernel input channels {cin}"
        )
    if bias.shape != (cout,):
        raise ContractViolationError(f"conv2d: bias shape {bias.shape} != output channels ({cout},)")
    if stride not in (1, 2):
        raise ContractViolationError(f"conv2d: stride must be 1 or 2, got {stride}")


# ============================================================================
# CONVOLUTION
# ============================================================================

def conv2d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: str = "same",
) -> np.ndarray:
    """Batched cross-correlation; x is (N, H, W, Cin)."""
    _check_conv_args(x, kernel, bias, stride)
    n, h, w, _ = x.shape
    k = kernel.shape[0]
    ho, wo, (top, bottom, left, right) = _conv_geometry(h, w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # windows: (N, Ho, Wo, Cin, k, k); kernel: (k, k, Cin, Cout)
    y = np.tensordot(windows, kernel, axes=([3, 4, 5], [2, 0, 1]))
    return y + bias


def conv2d_backward(
    dy: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int = 1,
    padding: str = "same",
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dkernel, dbias) of conv2d_forward."""
    n, h, w, cin = x.shape
    k = kernel.shape[0]
    ho, wo, (top, bottom, left, right) = _conv_geometry(h, w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]

    dkernel = np.tensordot(windows, dy, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
    dbias = dy.sum(axis=(0, 1, 2))

    dwindows = np.tensordot(dy, kernel, axes=([3], [3]))  # (N, Ho, Wo, k, k, Cin)
    dxp = np.zeros_like(xp)
    row_span = stride * (ho - 1) + 1
    col_span = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + row_span:stride, j:j + col_span:stride, :] += dwindows[:, :, :, i, j, :]
    dx = dxp[:, top:top + h, left:left + w, :]
    return dx, dkernel.astype(kernel.dtype, copy=False), dbias


def conv2d(
    input: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: str = "same",
) -> np.ndarray:
    """Cross-correlation of an (H, W, Cin) sample or (N, H, W, Cin) batch."""
    x, single = _batched(np.asarray(input), 3, "conv2d")
    y = conv2d_forward(x, np.asarray(kernel), np.asarray(bias), stride, padding)
    return y[0] if single else y


# ============================================================================
# FULLY CONNECTED
# ============================================================================

def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ContractViolationError(
            f"fully_connected: input width {x.shape[-1]} != weight rows {weight.shape[0] if weight.ndim else None}"
        )
    if bias.shape != (weight.shape[1],):
        raise ContractViolationError(
            f"fully_connected: bias shape {bias.shape} != output width ({weight.shape[1]},)"
        )
    return x @ weight + bias


def dense_backward(
    dy: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dy @ weight.T, x.T @ dy, dy.sum(axis=0)


def fully_connected(input: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """output[j] = sum_i input[i] * weight[i, j] + bias[j]; accepts (N,) or (B, N)."""
    x, single = _batched(np.asarray(input), 1, "fully_connected")
    y = dense_forward(x, np.asarray(weight), np.asarray(bias))
    return y[0] if single else y


# ============================================================================
# ACTIVATIONS & NORMALIZATION
# ============================================================================

def leaky_relu(input: np.ndarray, slope: float = DEFAULT_LEAKY_SLOPE) -> np.ndarray:
    if slope < 0:
        raise ContractViolationError(f"leaky_relu: slope must be >= 0, got {slope}")
    x = np.asarray(input)
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, dy, dy * dy.dtype.type(slope))


def layer_norm_forward(
    x: np.ndarray, gain: np.ndarray, offset: np.ndarray, epsilon: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize over the last axis. Returns (y, xhat, inv_std)."""
    if x.shape[-1] < 2:
        raise ContractViolationError(f"layer_norm: needs at least 2 features, got {x.shape[-1]}")
    if gain.shape != (x.shape[-1],) or offset.shape != (x.shape[-1],):
        raise ContractViolationError(
            f"layer_norm: gain/offset shapes {gain.shape}/{offset.shape} != ({x.shape[-1]},)"
        )
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + x.dtype.type(epsilon))
    xhat = centered * inv_std
    return xhat * gain + offset, xhat, inv_std


def layer_norm_backward(
    dy: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, gain: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = xhat.shape[-1]
    dxhat = dy * gain
    dgain = (dy * xhat).reshape(-1, n).sum(axis=0)
    doffset = dy.reshape(-1, n).sum(axis=0)
    dx = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, doffset


def layer_norm(
    input: np.ndarray,
    gain: np.ndarray,
    offset: np.ndarray,
    epsilon: float = DEFAULT_LN_EPSILON,
) -> np.ndarray:
    x = np.asarray(input)
    y, _, _ = layer_norm_forward(x, np.asarray(gain, dtype=x.dtype), np.asarray(offset, dtype=x.dtype), epsilon)
    return y


# ============================================================================
# POOLING & RESAMPLING
# ============================================================================

def avg_pool2_forward(x: np.ndarray) -> np.ndarray:
    _, h, w, _ = x.shape
    if h % 2 or w % 2:
        raise ContractViolationError(f"avg_pool2: spatial dims must be even, got {h}x{w}")
    total = x[:, 0::2, 0::2] + x[:, 0::2, 1::2] + x[:, 1::2, 0::2] + x[:, 1::2, 1::2]
    return total * x.dtype.type(0.25)


def avg_pool2_backward(dy: np.ndarray) -> np.ndarray:
    quarter = dy * dy.dtype.type(0.25)
    return np.repeat(np.repeat(quarter, 2, axis=1), 2, axis=2)


def avg_pool2(input: np.ndarray) -> np.ndarray:
    x, single = _batched(np.asarray(input), 3, "avg_pool2")
    y = avg_pool2_forward(x)
    return y[0] if single else y


@lru_cache(maxsize=64)
def _bilinear_matrix_cached(size: int, factor: int) -> np.ndarray:
    out = size * factor
    matrix = np.zeros((out, size), dtype=np.float64)
    for o in range(out):
        src = (o + 0.5) / factor - 0.5
        src = min(max(src, 0.0), size - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, size - 1)
        t = src - i0
        matrix[o, i0] += 1.0 - t
        matrix[o, i1] += t
    matrix.setflags(write=False)
    return matrix


def bilinear_matrix(size: int, factor: int, dtype=np.float64) -> np.ndarray:
    """(size*factor, size) half-pixel-center interpolation matrix; rows sum to 1."""
    if size < 1 or factor < 1:
        raise ContractViolationError(f"bilinear: invalid size {size} / factor {factor}")
    return _bilinear_matrix_cached(size, factor).astype(dtype, copy=False)


def bilinear_resize_forward(x: np.ndarray, factor: int) -> np.ndarray:
    """Upsample the two spatial axes of (N, H, W, C) by an integer factor."""
    _, h, w, _ = x.shape
    uh = bilinear_matrix(h, factor, x.dtype)
    uw = bilinear_matrix(w, factor, x.dtype)
    rows = np.moveaxis(np.tensordot(uh, x, axes=([1], [1])), 0, 1)      # (N, Ho, W, C)
    return np.moveaxis(np.tensordot(uw, rows, axes=([1], [2])), 0, 2)   # (N, Ho, Wo, C)


def bilinear_resize_backward(dy: np.ndarray, factor: int) -> np.ndarray:
    _, ho, wo, _ = dy.shape
    uh = bilinear_matrix(ho // factor, factor, dy.dtype)
    uw = bilinear_matrix(wo // factor, factor, dy.dtype)
    rows = np.moveaxis(np.tensordot(uw.T, dy, axes=([1], [2])), 0, 2)   # (N, Ho, W, C)
    return np.moveaxis(np.tensordot(uh.T, rows, axes=([1], [1])), 0, 1)


def bilinear_upsample2(input: np.ndarray) -> np.ndarray:
    x, single = _batched(np.asarray(input), 3, "bilinear_upsample2")
    y = bilinear_resize_forward(x, 2)
    return y[0] if single else y


# ============================================================================
# RESIDUAL GATING
# ============================================================================

def scalar_gated_residual(
    input: np.ndarray,
    branch: Callable[[np.ndarray], np.ndarray],
    gate: float,
) -> np.ndarray:
    """input + gate * branch(input); the branch must preserve the shape."""
    x = np.asarray(input)
    out = branch(x)
    if out.shape != x.shape:
        raise ContractViolationError(
            f"scalar_gated_residual: branch changed shape {x.shape} -> {out.shape}"
        )
    return x + x.dtype.type(gate) * out
