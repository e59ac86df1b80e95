"""
Feasibility
Version: 1.0

A factor tuple is infeasible when the finger penetrates the stage floor
or its fingertip lies strictly inside the cube. The floor is a bowl: a
circular arc of radius `floor_radius` about the arm base, so floor
contact depends on the finger's reach (middle and lower joints). This is
what correlates the joint factors under the feasible-uniform distribution.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from sklearn.metrics import mutual_info_score

from schemas import SceneConfig
from services.errors import ContractViolationError, GridTooLargeError
from services.scene.factors import JOINT_FACTORS, FactorSpec, FactorTuple
from services.scene.kinematics import chain_points

logger = logging.getLogger(__name__)

MAX_ENUMERATION = 10 ** 8
ENUMERATION_CHUNK = 1 << 20

# Allowed indices per factor position; absent factors are unrestricted.
Allowed = Dict[int, np.ndarray]


@dataclass
class SceneGeometry:
    """Per-row geometric quantities of a batch of factor tuples."""
    points: np.ndarray         # (n, 4, 2) chain points
    cube_center: np.ndarray    # (n, 2)
    cube_rotation: np.ndarray  # (n,) radians
    cube_hue: np.ndarray       # (n,) degrees


def _column(spec: FactorSpec, values: np.ndarray, name: str, default: float) -> np.ndarray:
    if name in spec.names:
        return values[:, spec.index(name)]
    return np.full(values.shape[0], default)


def scene_geometry(index_matrix: np.ndarray, spec: FactorSpec, config: SceneConfig) -> SceneGeometry:
    """Geometry of an (n, F) index matrix. Joint factors are required; cube factors default to 0."""
    missing = [n for n in JOINT_FACTORS if n not in spec.names]
    if missing:
        raise ContractViolationError(f"factor spec lacks joint factors {missing}")
    values = spec.value_matrix(np.atleast_2d(index_matrix))
    angles = np.stack([values[:, spec.index(n)] for n in JOINT_FACTORS], axis=1)
    return SceneGeometry(
        points=chain_points(angles, config.link_lengths, config.base),
        cube_center=np.stack([_column(spec, values, "cube_x", 0.0), _column(spec, values, "cube_y", 0.0)], axis=1),
        cube_rotation=np.deg2rad(_column(spec, values, "cube_rotation", 0.0)),
        cube_hue=_column(spec, values, "cube_hue", 0.0),
    )


def below_floor(points: np.ndarray, config: SceneConfig) -> np.ndarray:
    """True where a point lies beneath the bowl-shaped stage surface."""
    offset = points - np.asarray(config.base)
    beneath = offset[..., 1] < 0
    return beneath & (np.hypot(offset[..., 0], offset[..., 1]) > config.floor_radius)


def inside_cube(points: np.ndarray, center: np.ndarray, rotation: np.ndarray, edge: float) -> np.ndarray:
    """True where points lie strictly inside the rotated squares. Shapes broadcast over the batch."""
    d = points - center
    c, s = np.cos(rotation), np.sin(rotation)
    u = c * d[..., 0] + s * d[..., 1]
    v = -s * d[..., 0] + c * d[..., 1]
    return np.maximum(np.abs(u), np.abs(v)) < edge / 2.0


def feasible_mask(index_matrix: np.ndarray, spec: FactorSpec, config: SceneConfig) -> np.ndarray:
    """Vectorized feasibility of an (n, F) index matrix."""
    geometry = scene_geometry(index_matrix, spec, config)
    floor_hit = below_floor(geometry.points, config).any(axis=1)
    tip_in_cube = inside_cube(geometry.points[:, -1], geometry.cube_center, geometry.cube_rotation, config.cube_edge)
    return ~(floor_hit | tip_in_cube)


def is_feasible(factors: FactorTuple, spec: FactorSpec, config: SceneConfig) -> bool:
    factors = spec.validate_tuple(factors)
    return bool(feasible_mask(np.array([factors]), spec, config)[0])


# ============================================================================
# ENUMERATION
# ============================================================================

@dataclass
class FeasibilityCount:
    count: int
    total: int
    pair: Optional[Tuple[str, str]] = None
    density: Optional[np.ndarray] = None  # feasible counts indexed [value of a, value of b]

    @property
    def fraction(self) -> float:
        return self.count / self.total if self.total else 0.0


def _axes(spec: FactorSpec, allowed: Optional[Allowed]) -> list:
    allowed = allowed or {}
    return [
        np.asarray(allowed.get(k, np.arange(f.cardinality)), dtype=np.int64)
        for k, f in enumerate(spec.factors)
    ]


def iter_grid(spec: FactorSpec, allowed: Optional[Allowed] = None, chunk: int = ENUMERATION_CHUNK):
    """Yield the (restricted) grid as index-matrix chunks in row-major order."""
    axes = _axes(spec, allowed)
    sizes = tuple(len(a) for a in axes)
    total = int(np.prod(sizes, dtype=np.float64))
    if total > MAX_ENUMERATION:
        raise GridTooLargeError(
            f"grid of {total:,} tuples exceeds the enumeration limit of {MAX_ENUMERATION:,}; "
            "estimate feasibility by sampling instead"
        )
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        positions = np.unravel_index(flat, sizes)
        yield np.stack([axis[p] for axis, p in zip(axes, positions)], axis=1)


def enumerate_feasible(
    spec: FactorSpec,
    config: SceneConfig,
    pair: Optional[Tuple[str, str]] = None,
    allowed: Optional[Allowed] = None,
) -> FeasibilityCount:
    """
    Exact feasible count over the grid, with an optional 2D density table.

    Args:
        spec: Factor grid
        config: Scene geometry
        pair: Two factor names whose feasible-count marginal is exported
        allowed: Optional per-factor index restrictions (e.g. fixing one joint)

    Raises:
        GridTooLargeError: If the grid holds more than 10^8 tuples
    """
    if pair is not None:
        a, b = spec.index(pair[0]), spec.index(pair[1])
        if a == b:
            raise ContractViolationError(f"density pair must name two factors, got {pair}")
        card_b = spec.factors[b].cardinality
        density = np.zeros(spec.factors[a].cardinality * card_b, dtype=np.int64)
    count = 0
    total = 0
    for block in iter_grid(spec, allowed):
        mask = feasible_mask(block, spec, config)
        count += int(mask.sum())
        total += len(block)
        if pair is not None:
            cells = block[mask, a] * card_b + block[mask, b]
            density += np.bincount(cells, minlength=density.size)

    result = FeasibilityCount(count=count, total=total)
    if pair is not None:
        result.pair = (pair[0], pair[1])
        result.density = density.reshape(spec.factors[a].cardinality, card_b)
    logger.info(f"Feasible tuples: {count:,} / {total:,} ({result.fraction:.3f})")
    return result


def feasibility_density(
    spec: FactorSpec,
    config: SceneConfig,
    factor_a: str,
    factor_b: str,
    fixed: Optional[Dict[str, int]] = None,
) -> np.ndarray:
    """Feasible-count table over two factors, optionally slicing other factors at fixed indices."""
    allowed: Allowed = {}
    for name, index in (fixed or {}).items():
        allowed.update(spec.restricted(name, [index]))
    return enumerate_feasible(spec, config, pair=(factor_a, factor_b), allowed=allowed).density


def pair_mutual_information(density: np.ndarray) -> float:
    """Mutual information (nats) of the two factors under the feasible-uniform distribution."""
    return float(mutual_info_score(None, None, contingency=density))
