"""
Layers & Layer Graphs
Version: 1.0

Stateful layer objects over the functional kernels in ops.py. Each layer
caches what its backward pass needs during forward and writes parameter
gradients into the ParamStore. A LayerGraph is an ordered sequence of
layers; backward visits them in exact reverse order.

Shapes passed to output_shape() are per-sample (no batch axis).
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from services.errors import ContractViolationError, DiagnosticError
from services.tensor import ops
from services.tensor.params import ParamStore

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]


def he_uniform(rng: np.random.Generator, shape: Shape, fan_in: int, scale: float = 1.0) -> np.ndarray:
    """Fan-in scaled uniform init: U(-a, a) with a = scale * sqrt(6 / fan_in)."""
    limit = scale * math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base layer. Subclasses override the hooks they need."""

    kind = "layer"

    def __init__(self, name: str):
        self.name = name

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        pass

    def param_names(self) -> List[str]:
        return []

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.name})"


# ============================================================================
# PARAMETRIC LAYERS
# ============================================================================

class Conv2D(Layer):
    kind = "conv"

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: str = "same",
    ):
        super().__init__(name)
        if kernel_size % 2 == 0:
            raise ContractViolationError(f"{name}: kernel size must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self._x: Optional[np.ndarray] = None

    @property
    def weight_name(self) -> str:
        return f"{self.name}.w"

    @property
    def bias_name(self) -> str:
        return f"{self.name}.b"

    def param_names(self) -> List[str]:
        return [self.weight_name, self.bias_name]

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        k = self.kernel_size
        fan_in = k * k * self.in_channels
        params.add(self.weight_name, he_uniform(rng, (k, k, self.in_channels, self.out_channels), fan_in))
        params.add(self.bias_name, np.zeros(self.out_channels))

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 3:
            raise ContractViolationError(f"{self.name}: expects H x W x C input, got {input_shape}")
        h, w, c = input_shape
        if c != self.in_channels:
            raise ContractViolationError(
                f"{self.name}: input channels {c} != configured in_channels {self.in_channels}"
            )
        if self.padding == "same":
            return (-(-h // self.stride), -(-w // self.stride), self.out_channels)
        return ((h - self.kernel_size) // self.stride + 1, (w - self.kernel_size) // self.stride + 1, self.out_channels)

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        self._x = x
        return ops.conv2d_forward(x, params.value(self.weight_name), params.value(self.bias_name), self.stride, self.padding)

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        dx, dw, db = ops.conv2d_backward(dy, self._x, params.value(self.weight_name), self.stride, self.padding)
        params.accumulate_grad(self.weight_name, dw)
        params.accumulate_grad(self.bias_name, db)
        return dx


class Dense(Layer):
    kind = "fc"

    def __init__(
        self,
        name: str,
        in_features: int,
        out_features: int,
        init_scale: float = 1.0,
        bias_init: float = 0.0,
        zero_init: bool = False,
    ):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.init_scale = init_scale
        self.bias_init = bias_init
        self.zero_init = zero_init
        self._x: Optional[np.ndarray] = None

    @property
    def weight_name(self) -> str:
        return f"{self.name}.w"

    @property
    def bias_name(self) -> str:
        return f"{self.name}.b"

    def param_names(self) -> List[str]:
        return [self.weight_name, self.bias_name]

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        shape = (self.in_features, self.out_features)
        if self.zero_init:
            weight = np.zeros(shape)
        else:
            weight = he_uniform(rng, shape, self.in_features, self.init_scale)
        params.add(self.weight_name, weight)
        params.add(self.bias_name, np.full(self.out_features, self.bias_init))

    def output_shape(self, input_shape: Shape) -> Shape:
        if input_shape != (self.in_features,):
            raise ContractViolationError(
                f"{self.name}: input width {input_shape} != in_features ({self.in_features},)"
            )
        return (self.out_features,)

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        self._x = x
        return ops.dense_forward(x, params.value(self.weight_name), params.value(self.bias_name))

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        dx, dw, db = ops.dense_backward(dy, self._x, params.value(self.weight_name))
        params.accumulate_grad(self.weight_name, dw)
        params.accumulate_grad(self.bias_name, db)
        return dx


class LayerNorm(Layer):
    kind = "layer_norm"

    def __init__(self, name: str, features: int, epsilon: float = ops.DEFAULT_LN_EPSILON):
        super().__init__(name)
        self.features = features
        self.epsilon = epsilon
        self._cache = None

    def param_names(self) -> List[str]:
        return [f"{self.name}.gain", f"{self.name}.offset"]

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        params.add(f"{self.name}.gain", np.ones(self.features))
        params.add(f"{self.name}.offset", np.zeros(self.features))

    def output_shape(self, input_shape: Shape) -> Shape:
        if input_shape[-1:] != (self.features,):
            raise ContractViolationError(
                f"{self.name}: last dimension {input_shape[-1:]} != features {self.features}"
            )
        return input_shape

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        gain, offset = params.value(f"{self.name}.gain"), params.value(f"{self.name}.offset")
        y, xhat, inv_std = ops.layer_norm_forward(x, gain, offset, self.epsilon)
        self._cache = (xhat, inv_std)
        return y

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        xhat, inv_std = self._cache
        dx, dgain, doffset = ops.layer_norm_backward(dy, xhat, inv_std, params.value(f"{self.name}.gain"))
        params.accumulate_grad(f"{self.name}.gain", dgain)
        params.accumulate_grad(f"{self.name}.offset", doffset)
        return dx


# ============================================================================
# PARAMETER-FREE LAYERS
# ============================================================================

class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, name: str, slope: float = ops.DEFAULT_LEAKY_SLOPE):
        super().__init__(name)
        self.slope = slope
        self._x: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        self._x = x
        return ops.leaky_relu(x, self.slope)

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        return ops.leaky_relu_backward(dy, self._x, self.slope)


class AvgPool2(Layer):
    kind = "avg_pool"

    def output_shape(self, input_shape: Shape) -> Shape:
        h, w, c = input_shape
        if h % 2 or w % 2:
            raise ContractViolationError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        return ops.avg_pool2_forward(x)

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        return ops.avg_pool2_backward(dy)


class BilinearUpsample2(Layer):
    kind = "bilinear_upsample"

    def output_shape(self, input_shape: Shape) -> Shape:
        h, w, c = input_shape
        return (2 * h, 2 * w, c)

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        return ops.bilinear_resize_forward(x, 2)

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        return ops.bilinear_resize_backward(dy, 2)


class Reshape(Layer):
    """Reshape each sample; Reshape(name, (n,)) flattens."""
    kind = "reshape"

    def __init__(self, name: str, target: Shape):
        super().__init__(name)
        self.target = tuple(target)
        self._input_shape: Optional[Tuple[int, ...]] = None

    def output_shape(self, input_shape: Shape) -> Shape:
        if int(np.prod(input_shape)) != int(np.prod(self.target)):
            raise ContractViolationError(
                f"{self.name}: cannot reshape {input_shape} to {self.target}"
            )
        return self.target

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        self._input_shape = x.shape
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        return dy.reshape(self._input_shape)


# ============================================================================
# COMPOSITE LAYERS
# ============================================================================

class ResidualBlock(Layer):
    """
    Scalar-gated residual block:
        out = x + gate * conv3x3(leaky(conv3x3(leaky(x))))
    The gate starts at 0 so the block is the identity at init.
    """
    kind = "scalar_gated_residual"

    def __init__(self, name: str, channels: int, slope: float = ops.DEFAULT_LEAKY_SLOPE):
        super().__init__(name)
        self.channels = channels
        self.branch = [
            LeakyReLU(f"{name}.act1", slope),
            Conv2D(f"{name}.conv1", channels, channels, 3),
            LeakyReLU(f"{name}.act2", slope),
            Conv2D(f"{name}.conv2", channels, channels, 3),
        ]
        self._branch_out: Optional[np.ndarray] = None

    @property
    def gate_name(self) -> str:
        return f"{self.name}.gate"

    def param_names(self) -> List[str]:
        names = [n for layer in self.branch for n in layer.param_names()]
        return names + [self.gate_name]

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        for layer in self.branch:
            layer.init_params(params, rng)
        params.add(self.gate_name, np.zeros(1))

    def output_shape(self, input_shape: Shape) -> Shape:
        shape = input_shape
        for layer in self.branch:
            shape = layer.output_shape(shape)
        if shape != input_shape:
            raise ContractViolationError(
                f"{self.name}: branch changed shape {input_shape} -> {shape}"
            )
        return input_shape

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        out = x
        for layer in self.branch:
            out = layer.forward(out, params)
        self._branch_out = out
        return x + params.value(self.gate_name)[0] * out

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        gate = params.value(self.gate_name)[0]
        params.accumulate_grad(self.gate_name, np.array([np.sum(dy * self._branch_out)], dtype=params.dtype))
        d = dy * gate
        for layer in reversed(self.branch):
            d = layer.backward(d, params)
        return dy + d


class GaussianHeads(Layer):
    """Two parallel FC heads (mean, log-variance) concatenated to width 2d."""
    kind = "gaussian_heads"

    def __init__(
        self,
        name: str,
        in_features: int,
        latent_dim: int,
        logvar_init_scale: float = 0.1,
        logvar_bias: float = -1.0,
    ):
        super().__init__(name)
        self.latent_dim = latent_dim
        self.mean = Dense(f"{name}.mean", in_features, latent_dim)
        self.logvar = Dense(
            f"{name}.logvar", in_features, latent_dim,
            init_scale=logvar_init_scale, bias_init=logvar_bias,
        )

    def param_names(self) -> List[str]:
        return self.mean.param_names() + self.logvar.param_names()

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        self.mean.init_params(params, rng)
        self.logvar.init_params(params, rng)

    def output_shape(self, input_shape: Shape) -> Shape:
        self.mean.output_shape(input_shape)
        return (2 * self.latent_dim,)

    def forward(self, x: np.ndarray, params: ParamStore) -> np.ndarray:
        return np.concatenate([self.mean.forward(x, params), self.logvar.forward(x, params)], axis=-1)

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        d = self.latent_dim
        return self.mean.backward(dy[:, :d], params) + self.logvar.backward(dy[:, d:], params)


# ============================================================================
# GRAPH
# ============================================================================

class LayerGraph:
    """Ordered layer sequence with a validated per-sample input shape."""

    def __init__(self, name: str, layers: Sequence[Layer], input_shape: Shape):
        self.name = name
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.shapes: List[Shape] = [self.input_shape]
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ContractViolationError(f"{name}: duplicate layer names")

    @property
    def output_shape(self) -> Shape:
        return self.shapes[-1]

    def param_names(self) -> List[str]:
        return [n for layer in self.layers for n in layer.param_names()]

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.init_params(params, rng)

    def forward(self, x: np.ndarray, params: ParamStore, check_finite: bool = True) -> np.ndarray:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ContractViolationError(
                f"{self.name}: input shape {x.shape[1:]} != expected {self.input_shape}"
            )
        out = x
        for layer in self.layers:
            out = layer.forward(out, params)
            if check_finite and not np.all(np.isfinite(out)):
                raise DiagnosticError(f"{self.name}: non-finite activation after layer '{layer.name}'")
        return out

    def backward(self, dy: np.ndarray, params: ParamStore) -> np.ndarray:
        d = dy
        for layer in reversed(self.layers):
            d = layer.backward(d, params)
        return d

    def describe(self) -> List[str]:
        return [f"{layer.kind:<22} {layer.name:<28} -> {shape}" for layer, shape in zip(self.layers, self.shapes[1:])]
