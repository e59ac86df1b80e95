"""
Tests for the tensor kernels
Version: 1.0

Forward kernels against naive-loop oracles and hand-computed values.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from services.errors import ContractViolationError
from services.tensor.layers import ResidualBlock
from services.tensor.ops import (
    avg_pool2,
    bilinear_upsample2,
    conv2d,
    fully_connected,
    layer_norm,
    leaky_relu,
    same_padding,
    scalar_gated_residual,
)
from services.tensor.params import ParamStore


def naive_conv(x, kernel, bias, stride, padding):
    h, w, cin = x.shape
    k, _, _, cout = kernel.shape
    if padding == "same":
        ho, top, bottom = same_padding(h, k, stride)
        wo, left, right = same_padding(w, k, stride)
    else:
        ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
        top = bottom = left = right = 0
    xp = np.zeros((h + top + bottom, w + left + right, cin))
    xp[top:top + h, left:left + w] = x
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for o in range(cout):
                total = bias[o]
                for a in range(k):
                    for b in range(k):
                        for c in range(cin):
                            total += xp[i * stride + a, j * stride + b, c] * kernel[a, b, c, o]
                out[i, j, o] = total
    return out


def half_pixel_upsample(x):
    """Direct bilinear formula with half-pixel centers and edge clamping."""
    h, w, c = x.shape
    out = np.zeros((2 * h, 2 * w, c))
    for oi in range(2 * h):
        for oj in range(2 * w):
            si = min(max((oi + 0.5) / 2 - 0.5, 0.0), h - 1.0)
            sj = min(max((oj + 0.5) / 2 - 0.5, 0.0), w - 1.0)
            i0, j0 = int(np.floor(si)), int(np.floor(sj))
            i1, j1 = min(i0 + 1, h - 1), min(j0 + 1, w - 1)
            ti, tj = si - i0, sj - j0
            out[oi, oj] = (
                (1 - ti) * (1 - tj) * x[i0, j0] + (1 - ti) * tj * x[i0, j1]
                + ti * (1 - tj) * x[i1, j0] + ti * tj * x[i1, j1]
            )
    return out


class TestConv2d:
    """Cross-correlation with zero padding."""

    def test_scalar_kernel_scales_input(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        out = conv2d(x, np.full((1, 1, 1, 1), 2.0), np.zeros(1))
        assert_array_equal(out[:, :, 0], [[2.0, 4.0], [6.0, 8.0]])

    def test_zero_kernel_gives_bias(self, rng):
        x = rng.normal(size=(5, 5, 2))
        out = conv2d(x, np.zeros((3, 3, 2, 1)), np.array([5.0]))
        assert_array_equal(out, np.full((5, 5, 1), 5.0))

    @pytest.mark.parametrize("stride,padding", [(2, "same"), (1, "same"), (1, "valid"), (2, "valid")])
    def test_matches_naive_loop(self, rng, stride, padding):
        x = rng.normal(size=(8, 8, 3))
        kernel = rng.normal(size=(5, 5, 3, 4))
        bias = rng.normal(size=4)
        assert_allclose(conv2d(x, kernel, bias, stride, padding), naive_conv(x, kernel, bias, stride, padding), rtol=1e-5, atol=1e-10)

    def test_same_output_size_is_ceil(self, rng):
        out = conv2d(rng.normal(size=(7, 7, 1)), rng.normal(size=(3, 3, 1, 2)), np.zeros(2), stride=2)
        assert out.shape == (4, 4, 2)

    def test_batch_matches_single(self, rng):
        x = rng.normal(size=(3, 6, 6, 2))
        kernel = rng.normal(size=(3, 3, 2, 2))
        bias = rng.normal(size=2)
        batched = conv2d(x, kernel, bias)
        for i in range(3):
            assert_allclose(batched[i], conv2d(x[i], kernel, bias), rtol=1e-12)

    def test_channel_mismatch_names_dimension(self, rng):
        with pytest.raises(ContractViolationError, match="channels"):
            conv2d(rng.normal(size=(4, 4, 2)), rng.normal(size=(3, 3, 3, 1)), np.zeros(1))

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ContractViolationError):
            conv2d(rng.normal(size=(4, 4, 1)), rng.normal(size=(2, 2, 1, 1)), np.zeros(1))

    def test_stride_three_rejected(self, rng):
        with pytest.raises(ContractViolationError):
            conv2d(rng.normal(size=(4, 4, 1)), rng.normal(size=(1, 1, 1, 1)), np.zeros(1), stride=3)


class TestFullyConnected:

    def test_identity_weight(self, rng):
        x = rng.normal(size=6)
        assert_array_equal(fully_connected(x, np.eye(6), np.zeros(6)), x)

    def test_zero_weight_gives_bias(self, rng):
        bias = rng.normal(size=3)
        assert_array_equal(fully_connected(rng.normal(size=4), np.zeros((4, 3)), bias), bias)

    def test_matches_double_loop(self, rng):
        x, w, b = rng.normal(size=16), rng.normal(size=(16, 8)), rng.normal(size=8)
        expected = np.array([sum(x[i] * w[i, j] for i in range(16)) + b[j] for j in range(8)])
        assert_allclose(fully_connected(x, w, b), expected, rtol=1e-6)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ContractViolationError):
            fully_connected(rng.normal(size=5), rng.normal(size=(4, 3)), np.zeros(3))
        with pytest.raises(ContractViolationError):
            fully_connected(rng.normal(size=4), rng.normal(size=(4, 3)), np.zeros(2))


class TestActivations:

    @pytest.mark.parametrize("value,expected", [(3.0, 3.0), (-1.0, -0.02), (0.0, 0.0)])
    def test_leaky_relu(self, value, expected):
        assert leaky_relu(np.array([value]))[0] == pytest.approx(expected)

    def test_negative_slope_rejected(self):
        with pytest.raises(ContractViolationError):
            leaky_relu(np.ones(2), slope=-0.1)

    def test_layer_norm_closed_form(self):
        out = layer_norm(np.array([1.0, 2.0, 3.0]), np.ones(3), np.zeros(3), epsilon=0.0)
        assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-4)

    def test_layer_norm_constant_input(self):
        assert_array_equal(layer_norm(np.full(4, 7.0), np.ones(4), np.zeros(4)), np.zeros(4))

    def test_layer_norm_zero_gain(self, rng):
        offset = rng.normal(size=5)
        assert_allclose(layer_norm(rng.normal(size=5), np.zeros(5), offset), offset)

    def test_layer_norm_needs_two_features(self):
        with pytest.raises(ContractViolationError):
            layer_norm(np.ones(1), np.ones(1), np.zeros(1))


class TestResampling:

    def test_avg_pool_mean_of_window(self):
        x = np.array([[1.0, 3.0], [5.0, 7.0]])[:, :, None]
        assert_array_equal(avg_pool2(x), [[[4.0]]])

    def test_avg_pool_constant(self):
        assert_array_equal(avg_pool2(np.full((6, 4, 2), 3.5)), np.full((3, 2, 2), 3.5))

    def test_avg_pool_matches_window_loop(self, rng):
        x = rng.normal(size=(8, 8, 2))
        expected = np.array([[x[2 * i:2 * i + 2, 2 * j:2 * j + 2].mean(axis=(0, 1)) for j in range(4)] for i in range(4)])
        assert_allclose(avg_pool2(x), expected, rtol=1e-12)

    def test_avg_pool_odd_rejected(self):
        with pytest.raises(ContractViolationError):
            avg_pool2(np.ones((3, 4, 1)))

    def test_upsample_constant(self):
        assert_allclose(bilinear_upsample2(np.full((3, 5, 2), 0.25)), np.full((6, 10, 2), 0.25))

    def test_upsample_single_pixel(self):
        assert_allclose(bilinear_upsample2(np.full((1, 1, 1), 4.0)), np.full((2, 2, 1), 4.0))

    def test_upsample_half_pixel_oracle(self):
        x = np.array([[0.0, 2.0], [4.0, 6.0]])[:, :, None]
        assert_allclose(bilinear_upsample2(x), half_pixel_upsample(x), atol=1e-12)
        assert bilinear_upsample2(x)[1, 1, 0] == pytest.approx(0.75 * 0.75 * 0 + 0.75 * 0.25 * 2 + 0.25 * 0.75 * 4 + 0.25 * 0.25 * 6)

    def test_upsample_random_oracle(self, rng):
        x = rng.normal(size=(3, 4, 2))
        assert_allclose(bilinear_upsample2(x), half_pixel_upsample(x), atol=1e-12)


class TestScalarGatedResidual:

    def test_gate_zero_is_identity(self, rng):
        x = rng.normal(size=(4, 4, 2))
        assert_array_equal(scalar_gated_residual(x, lambda v: 10.0 * v + 3.0, 0.0), x)

    def test_branch_shape_change_rejected(self, rng):
        with pytest.raises(ContractViolationError):
            scalar_gated_residual(rng.normal(size=(4, 4, 2)), lambda v: v[:2], 1.0)

    def test_block_zero_branch_with_gate_one(self, rng):
        block = ResidualBlock("res", 2)
        params = ParamStore(dtype=np.float64)
        block.init_params(params, rng)
        for name in params.names():
            params.set_value(name, np.zeros_like(params.value(name)))
        params.set_value(block.gate_name, np.ones(1))
        x = rng.normal(size=(2, 4, 4, 2))
        assert_array_equal(block.forward(x, params), x)

    def test_block_identity_at_init(self, rng):
        block = ResidualBlock("res", 3)
        params = ParamStore(dtype=np.float64)
        block.init_params(params, rng)
        x = rng.normal(size=(1, 4, 4, 3))
        assert_array_equal(block.forward(x, params), x)
