"""
VAE Architecture
Version: 1.0

Residual encoder/decoder graphs scaled to the configured resolution.

Encoder: conv5x5/2 + leaky, then one stage per resolution level. Each
stage is a pair of gated residual blocks, followed by a 1x1 conv when the
next stage is wider and by average pooling (except after the last stage)
down to a 4x4 grid. Then flatten, leaky, FC, leaky, LayerNorm and the
mean / log-variance heads.

Decoder mirrors it: FC, leaky, FC, reshape to 4x4, reversed stages with
bilinear upsampling after each, leaky, conv5x5 to 3 logit channels.
"""

import logging
import math
from typing import List

from schemas import ModelConfig
from services.errors import ConfigError
from services.tensor.layers import (
    AvgPool2,
    BilinearUpsample2,
    Conv2D,
    Dense,
    GaussianHeads,
    Layer,
    LayerGraph,
    LayerNorm,
    LeakyReLU,
    ResidualBlock,
    Reshape,
)

logger = logging.getLogger(__name__)

IMAGE_CHANNELS = 3
BOTTLENECK = 4
BLOCKS_PER_STAGE = 2


def num_stages(resolution: int) -> int:
    """Stage count: one per 2x level between the stem output and the 4x4 bottleneck, plus one."""
    ratio = resolution // 2 // BOTTLENECK
    if resolution % (2 * BOTTLENECK) or ratio < 1 or ratio & (ratio - 1):
        raise ConfigError(
            f"resolution {resolution} must be 8 times a power of two (stem /2 down to a 4x4 grid)"
        )
    return int(math.log2(ratio)) + 1


def stage_widths(config: ModelConfig) -> List[int]:
    stages = num_stages(config.resolution)
    if config.channel_widths is not None:
        if len(config.channel_widths) != stages:
            raise ConfigError(
                f"channel_widths has {len(config.channel_widths)} entries, "
                f"resolution {config.resolution} needs {stages}"
            )
        return list(config.channel_widths)
    return [config.base_channels * 2 ** math.ceil(i / 2) for i in range(stages)]


def _residual_pair(prefix: str, channels: int, slope: float) -> List[Layer]:
    return [ResidualBlock(f"{prefix}.res{j}", channels, slope) for j in range(BLOCKS_PER_STAGE)]


def build_encoder(config: ModelConfig) -> LayerGraph:
    widths = stage_widths(config)
    slope = config.leaky_slope
    layers: List[Layer] = [
        Conv2D("enc.stem", IMAGE_CHANNELS, widths[0], 5, stride=2),
        LeakyReLU("enc.stem_act", slope),
    ]
    for i, width in enumerate(widths):
        layers += _residual_pair(f"enc.stage{i}", width, slope)
        if i + 1 < len(widths):
            if widths[i + 1] != width:
                layers.append(Conv2D(f"enc.stage{i}.proj", width, widths[i + 1], 1))
            layers.append(AvgPool2(f"enc.stage{i}.pool"))
    flat = BOTTLENECK * BOTTLENECK * widths[-1]
    layers += [
        Reshape("enc.flatten", (flat,)),
        LeakyReLU("enc.flat_act", slope),
        Dense("enc.fc", flat, config.fc_width),
        LeakyReLU("enc.fc_act", slope),
        LayerNorm("enc.norm", config.fc_width),
        GaussianHeads("enc.heads", config.fc_width, config.latent_dim),
    ]
    graph = LayerGraph("encoder", layers, (config.resolution, config.resolution, IMAGE_CHANNELS))
    logger.debug(f"Encoder for {config.resolution}x{config.resolution}: widths={widths}")
    return graph


def build_decoder(config: ModelConfig) -> LayerGraph:
    widths = stage_widths(config)
    slope = config.leaky_slope
    flat = BOTTLENECK * BOTTLENECK * widths[-1]
    layers: List[Layer] = [
        Dense("dec.fc1", config.latent_dim, config.fc_width),
        LeakyReLU("dec.fc1_act", slope),
        Dense("dec.fc2", config.fc_width, flat),
        Reshape("dec.reshape", (BOTTLENECK, BOTTLENECK, widths[-1])),
    ]
    for i in reversed(range(len(widths))):
        layers += _residual_pair(f"dec.stage{i}", widths[i], slope)
        if i > 0 and widths[i - 1] != widths[i]:
            layers.append(Conv2D(f"dec.stage{i}.proj", widths[i], widths[i - 1], 1))
        layers.append(BilinearUpsample2(f"dec.stage{i}.up"))
    layers += [
        LeakyReLU("dec.out_act", slope),
        Conv2D("dec.out", widths[0], IMAGE_CHANNELS, 5),
    ]
    return LayerGraph("decoder", layers, (config.latent_dim,))
