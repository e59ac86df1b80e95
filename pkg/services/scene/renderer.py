"""
Scene Renderer
Version: 1.0

Deterministic hard-mask rasterizer for the finger scene, painted in
layers: background, bowl-shaped stage, rotated cube, arm links as
capsules. The arm is drawn above the cube unless the config says
otherwise. Pixel (row, col) samples the scene at its center; row 0 is
the top of the view.

The domain-shifted renderer stands in for real camera images: jittered
geometry, a background gradient, a brightness change and clipped sensor
noise, all seeded by (shift seed, factor tuple).
"""

import colorsys
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from schemas import DomainShift, SceneConfig
from services.scene.factors import FactorSpec, FactorTuple
from services.scene.feasibility import below_floor, inside_cube, scene_geometry

logger = logging.getLogger(__name__)


@dataclass
class SceneLayers:
    image: np.ndarray        # (R, R, 3) float32 in [0, 1]
    stage: np.ndarray        # (R, R) bool
    cube: np.ndarray         # visible cube pixels
    arm: np.ndarray          # visible arm pixels

    @property
    def background(self) -> np.ndarray:
        return ~(self.stage | self.cube | self.arm)


@lru_cache(maxsize=16)
def _pixel_centers(resolution: int, center: Tuple[float, float], half_extent: float) -> np.ndarray:
    pixel = 2.0 * half_extent / resolution
    offsets = (np.arange(resolution) + 0.5) * pixel
    xs = center[0] - half_extent + offsets
    ys = center[1] + half_extent - offsets
    grid = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)  # (R, R, 2); [row, col] = (x_col, y_row)
    grid.setflags(write=False)
    return grid


def pixel_centers(config: SceneConfig) -> np.ndarray:
    return _pixel_centers(config.resolution, tuple(config.view_center), config.view_half_extent)


def hue_to_rgb(hue_degrees: float, saturation: float, value: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb((hue_degrees / 360.0) % 1.0, saturation, value), dtype=np.float32)


def capsule_mask(pixels: np.ndarray, points: np.ndarray, radius: float) -> np.ndarray:
    """Pixels within `radius` of the polyline through `points`."""
    mask = np.zeros(pixels.shape[:-1], dtype=bool)
    for p0, p1 in zip(points[:-1], points[1:]):
        d = p1 - p0
        length2 = float(d @ d)
        rel = pixels - p0
        t = np.clip((rel @ d) / length2, 0.0, 1.0) if length2 > 0 else np.zeros(pixels.shape[:-1])
        nearest = p0 + t[..., None] * d
        mask |= np.hypot(*(pixels - nearest).transpose(2, 0, 1)) <= radius
    return mask


def rasterize(
    points: np.ndarray,
    cube_center: np.ndarray,
    cube_rotation: float,
    cube_hue: float,
    config: SceneConfig,
) -> SceneLayers:
    """Paint one scene from explicit geometry (chain points, cube pose in radians, hue in degrees)."""
    pixels = pixel_centers(config)
    r = config.resolution
    image = np.empty((r, r, 3), dtype=np.float32)
    image[:] = np.asarray(config.background_color, dtype=np.float32)

    stage = below_floor(pixels, config)
    image[stage] = np.asarray(config.stage_color, dtype=np.float32)

    cube = inside_cube(pixels, np.asarray(cube_center), cube_rotation, config.cube_edge)
    arm = capsule_mask(pixels, np.asarray(points), config.arm_thickness / 2.0)
    cube_color = hue_to_rgb(cube_hue, config.cube_saturation, config.cube_value)
    arm_color = np.asarray(config.arm_color, dtype=np.float32)

    if config.z_order == "arm_over_cube":
        image[cube] = cube_color
        image[arm] = arm_color
        cube = cube & ~arm
    else:
        image[arm] = arm_color
        image[cube] = cube_color
        arm = arm & ~cube
    return SceneLayers(image=image, stage=stage & ~(cube | arm), cube=cube, arm=arm)


def render_layers(factors: FactorTuple, spec: FactorSpec, config: SceneConfig) -> SceneLayers:
    factors = spec.validate_tuple(factors)
    g = scene_geometry(np.array([factors]), spec, config)
    return rasterize(g.points[0], g.cube_center[0], float(g.cube_rotation[0]), float(g.cube_hue[0]), config)


def render_scene(factors: FactorTuple, spec: FactorSpec, config: SceneConfig) -> np.ndarray:
    """Render one factor tuple to an (R, R, 3) float32 image in [0, 1]. Infeasible tuples render too."""
    return render_layers(factors, spec, config).image


# ============================================================================
# DOMAIN SHIFT
# ============================================================================

def domain_shift_render(
    factors: FactorTuple,
    spec: FactorSpec,
    config: SceneConfig,
    shift: DomainShift,
) -> np.ndarray:
    """Render with the emulated camera shift applied; the identity shift is bit-identical to render_scene."""
    factors = spec.validate_tuple(factors)
    if shift.is_identity:
        return render_scene(factors, spec, config)

    rng = np.random.default_rng([shift.seed, *factors])
    g = scene_geometry(np.array([factors]), spec, config)
    jitter = shift.geometry_jitter
    links = np.asarray(config.link_lengths) * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=3))
    base = np.asarray(config.base) + jitter * rng.uniform(-1.0, 1.0, size=2)
    cube_center = g.cube_center[0] + jitter * rng.uniform(-1.0, 1.0, size=2)

    # unit link directions carry the factor's own angles
    directions = np.diff(g.points[0], axis=0) / np.asarray(config.link_lengths)[:, None]
    points = np.concatenate([base[None], base + np.cumsum(directions * links[:, None], axis=0)])

    layers = rasterize(points, cube_center, float(g.cube_rotation[0]), float(g.cube_hue[0]), config)
    image = layers.image.astype(np.float64)
    ramp = np.linspace(0.5, -0.5, config.resolution)[:, None] * np.ones((1, config.resolution))
    image[layers.background] += shift.background_delta * ramp[layers.background][:, None]
    image *= shift.brightness
    if shift.noise_std > 0:
        image += rng.normal(0.0, shift.noise_std, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)
