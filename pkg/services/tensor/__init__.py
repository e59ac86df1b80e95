"""
Tensor core: numpy kernels with explicit backward passes, parameter
storage, layer graphs, Adam and gradient checking.
"""

from services.tensor.ops import (
    avg_pool2,
    bilinear_upsample2,
    conv2d,
    fully_connected,
    layer_norm,
    leaky_relu,
    scalar_gated_residual,
)
from services.tensor.params import ParamStore
from services.tensor.layers import (
    AvgPool2,
    BilinearUpsample2,
    Conv2D,
    Dense,
    GaussianHeads,
    LayerGraph,
    LayerNorm,
    LeakyReLU,
    ResidualBlock,
    Reshape,
)
from services.tensor.optim import AdamState, adam_step, clip_global_grad_norm
from services.tensor.gradcheck import finite_diff_gradcheck

__all__ = [
    "avg_pool2",
    "bilinear_upsample2",
    "conv2d",
    "fully_connected",
    "layer_norm",
    "leaky_relu",
    "scalar_gated_residual",
    "ParamStore",
    "AvgPool2",
    "BilinearUpsample2",
    "Conv2D",
    "Dense",
    "GaussianHeads",
    "LayerGraph",
    "LayerNorm",
    "LeakyReLU",
    "ResidualBlock",
    "Reshape",
    "AdamState",
    "adam_step",
    "clip_global_grad_norm",
    "finite_diff_gradcheck",
]
