"""
Input Noise
Version: 1.0

Two independent additive components on the encoder input: per-subpixel
Gaussian noise, and a greyscale low-resolution Gaussian field bilinearly
upsampled to the image size and shared by the three channels.
"""

import numpy as np

from schemas import NoiseConfig
from services.errors import ContractViolationError
from services.tensor.ops import bilinear_matrix, bilinear_resize_forward


def upsample_factor(resolution: int, grid: int) -> int:
    if resolution % grid:
        raise ContractViolationError(f"resolution {resolution} is not divisible by the noise grid {grid}")
    return resolution // grid


def add_input_noise(x: np.ndarray, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Noisy copy of an (R, R, C) image or (N, R, R, C) batch, clamped to [0, 1]."""
    single = x.ndim == 3
    batch = x[None] if single else x
    if noise.subpixel_std == 0 and noise.lowres_std == 0:
        return x.copy()

    n, h, w, _ = batch.shape
    if h != w:
        raise ContractViolationError(f"noise model expects square images, got {h}x{w}")
    factor = upsample_factor(h, noise.lowres_grid)
    dtype = batch.dtype

    out = batch.astype(dtype, copy=True)
    if noise.subpixel_std > 0:
        out += (noise.subpixel_std * rng.standard_normal(batch.shape)).astype(dtype)
    if noise.lowres_std > 0:
        field = noise.lowres_std * rng.standard_normal((n, noise.lowres_grid, noise.lowres_grid, 1))
        out += bilinear_resize_forward(field, factor).astype(dtype)
    np.clip(out, 0.0, 1.0, out=out)
    return out[0] if single else out


def lowres_variance_gain(resolution: int, grid: int) -> float:
    """Mean per-pixel variance of the upsampled field for unit-variance grid noise."""
    factor = upsample_factor(resolution, grid)
    m = bilinear_matrix(grid, factor)
    row_gain = (m ** 2).sum(axis=1)
    return float(np.outer(row_gain, row_gain).mean())
