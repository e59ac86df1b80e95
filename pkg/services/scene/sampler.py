"""
Scene Sampler
Version: 1.0

Uniform sampling of feasible factor tuples (rejection sampling), weak
supervision pairs differing in exactly one factor, and sharded dataset
generation. Shard k draws from the k-th child of the seed sequence and
shards are concatenated by index, so output does not depend on the
number of workers.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from schemas import DomainShift, SceneConfig
from services.errors import ContractViolationError, DiagnosticError
from services.scene.factors import FactorSpec, FactorTuple
from services.scene.feasibility import Allowed, feasible_mask
from services.scene.renderer import domain_shift_render, render_scene

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_REJECTIONS = 10 ** 6
REJECTION_BLOCK = 256
MAX_PAIR_RETRIES = 1000

SeedLike = Union[int, np.random.Generator]


def as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _draw_candidates(spec: FactorSpec, rng: np.random.Generator, n: int, allowed: Optional[Allowed]) -> np.ndarray:
    allowed = allowed or {}
    columns = []
    for k, factor in enumerate(spec.factors):
        if k in allowed:
            options = allowed[k]
            columns.append(options[rng.integers(len(options), size=n)])
        else:
            columns.append(rng.integers(factor.cardinality, size=n))
    return np.stack(columns, axis=1).astype(np.int64)


# ============================================================================
# SINGLE TUPLES
# ============================================================================

def sample_factor_batch(
    spec: FactorSpec,
    config: SceneConfig,
    n: int,
    rng: SeedLike,
    allowed: Optional[Allowed] = None,
) -> np.ndarray:
    """n tuples drawn uniformly from the feasible (and allowed) set, as an (n, F) index matrix."""
    rng = as_rng(rng)
    accepted: List[np.ndarray] = []
    have = 0
    rejected = 0
    while have < n:
        candidates = _draw_candidates(spec, rng, REJECTION_BLOCK, allowed)
        mask = feasible_mask(candidates, spec, config)
        if mask.any():
            accepted.append(candidates[mask])
            have += int(mask.sum())
            rejected = 0
        else:
            rejected += REJECTION_BLOCK
            if rejected >= MAX_CONSECUTIVE_REJECTIONS:
                raise DiagnosticError(
                    f"{rejected:,} consecutive rejections; the feasible set looks empty for this spec"
                )
    if not accepted:
        return np.zeros((0, spec.num_factors), dtype=np.int64)
    return np.concatenate(accepted)[:n]


def sample_factors(
    spec: FactorSpec,
    config: SceneConfig,
    rng_seed: SeedLike,
    allowed: Optional[Allowed] = None,
) -> FactorTuple:
    """One feasible tuple, uniform over the feasible set; deterministic given the seed."""
    return tuple(int(i) for i in sample_factor_batch(spec, config, 1, rng_seed, allowed)[0])


# ============================================================================
# WEAK SUPERVISION PAIRS
# ============================================================================

def _factor_options(spec: FactorSpec, allowed: Allowed, k: int) -> np.ndarray:
    return np.asarray(allowed.get(k, np.arange(spec.factors[k].cardinality)))


def _one_pair(
    spec: FactorSpec,
    config: SceneConfig,
    rng: np.random.Generator,
    allowed: Optional[Allowed],
) -> Tuple[np.ndarray, np.ndarray, int]:
    allowed = allowed or {}
    changeable = [k for k in range(spec.num_factors) if _factor_options(spec, allowed, k).size > 1]
    if not changeable:
        raise DiagnosticError("no factor has two allowed values; pairs cannot differ in one factor")
    # drawn once, independent of the base tuple
    k = changeable[int(rng.integers(len(changeable)))]
    for _ in range(MAX_PAIR_RETRIES):
        first = sample_factor_batch(spec, config, 1, rng, allowed)[0]
        options = _factor_options(spec, allowed, k)
        options = options[options != first[k]]
        candidates = np.repeat(first[None], options.size, axis=0)
        candidates[:, k] = options
        options = options[feasible_mask(candidates, spec, config)]
        if options.size == 0:
            continue
        second = first.copy()
        second[k] = options[rng.integers(options.size)]
        return first, second, k
    raise DiagnosticError(
        f"no feasible alternative for factor {spec.factors[k].name} found after {MAX_PAIR_RETRIES} tuples"
    )


def sample_weak_pair(
    spec: FactorSpec,
    config: SceneConfig,
    rng_seed: SeedLike,
    allowed: Optional[Allowed] = None,
) -> Tuple[FactorTuple, FactorTuple, int]:
    """
    Two feasible tuples differing in exactly one factor.

    The changed factor is uniform over the factors with more than one allowed
    value; its new value is uniform over the feasible alternatives. Base
    tuples without any alternative for the drawn factor are resampled.
    """
    first, second, k = _one_pair(spec, config, as_rng(rng_seed), allowed)
    return tuple(int(i) for i in first), tuple(int(i) for i in second), k


def sample_pair_batch(
    spec: FactorSpec,
    config: SceneConfig,
    n: int,
    rng: SeedLike,
    allowed: Optional[Allowed] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = as_rng(rng)
    firsts, seconds, changed = [], [], []
    for _ in range(n):
        a, b, k = _one_pair(spec, config, rng, allowed)
        firsts.append(a)
        seconds.append(b)
        changed.append(k)
    width = spec.num_factors
    return (
        np.array(firsts, dtype=np.int64).reshape(n, width),
        np.array(seconds, dtype=np.int64).reshape(n, width),
        np.array(changed, dtype=np.int64),
    )


# ============================================================================
# DATASET GENERATION
# ============================================================================

@dataclass
class GeneratedDataset:
    """In-memory dataset. With pairs, records 2i and 2i+1 form pair i."""
    spec: FactorSpec
    factors: np.ndarray                 # (n, F) int64
    images: np.ndarray                  # (n, R, R, 3) uint8
    pairs: bool = False
    changed: Optional[np.ndarray] = None  # (n/2,) changed factor per pair

    def __len__(self) -> int:
        return int(self.factors.shape[0])

    @property
    def resolution(self) -> int:
        return int(self.images.shape[1]) if self.images.ndim == 4 else 0

    def float_images(self, indices=None) -> np.ndarray:
        images = self.images if indices is None else self.images[indices]
        return images.astype(np.float32) / np.float32(255.0)

    def subset(self, indices: np.ndarray) -> "GeneratedDataset":
        return GeneratedDataset(spec=self.spec, factors=self.factors[indices], images=self.images[indices])


def to_bytes_image(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_batch(
    index_matrix: np.ndarray,
    spec: FactorSpec,
    config: SceneConfig,
    shift: Optional[DomainShift] = None,
) -> np.ndarray:
    r = config.resolution
    images = np.empty((len(index_matrix), r, r, 3), dtype=np.uint8)
    for i, row in enumerate(index_matrix):
        factors = tuple(int(v) for v in row)
        if shift is None:
            image = render_scene(factors, spec, config)
        else:
            image = domain_shift_render(factors, spec, config, shift)
        images[i] = to_bytes_image(image)
    return images


def _generate_shard(args) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    spec, config, count, seed, shard, pairs, shift, allowed = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(shard,)))
    if pairs:
        first, second, changed = sample_pair_batch(spec, config, count, rng, allowed)
        factors = np.empty((2 * count, spec.num_factors), dtype=np.int64)
        factors[0::2], factors[1::2] = first, second
    else:
        factors, changed = sample_factor_batch(spec, config, count, rng, allowed), None
    return factors, render_batch(factors, spec, config, shift), changed


def generate_records(
    spec: FactorSpec,
    config: SceneConfig,
    count: int,
    seed: int = 0,
    pairs: bool = False,
    shift: Optional[DomainShift] = None,
    allowed: Optional[Allowed] = None,
    shard_size: int = 1000,
    workers: int = 1,
) -> GeneratedDataset:
    """
    Generate `count` observations (or `count` pairs, i.e. 2*count records).

    Args:
        spec: Factor grid
        config: Scene configuration
        count: Number of observations, or of pairs when pairs=True
        seed: Root seed; shard k uses child k of its seed sequence
        pairs: Emit weak-supervision pairs as consecutive records
        shift: Render through the domain-shifted renderer
        allowed: Per-factor index restrictions (e.g. training hues only)
        shard_size: Samples per shard
        workers: Process count; does not affect the output
    """
    if count < 0:
        raise ContractViolationError(f"count must be >= 0, got {count}")
    sizes = [min(shard_size, count - start) for start in range(0, count, shard_size)]
    jobs = [(spec, config, n, seed, k, pairs, shift, allowed) for k, n in enumerate(sizes)]
    logger.info(f"Generating {count} {'pairs' if pairs else 'observations'} in {len(jobs)} shards ({workers} workers)")

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_shard, jobs))
    else:
        results = [_generate_shard(job) for job in jobs]

    r = config.resolution
    width = spec.num_factors
    factors = np.concatenate([f for f, _, _ in results]) if results else np.zeros((0, width), dtype=np.int64)
    images = np.concatenate([i for _, i, _ in results]) if results else np.zeros((0, r, r, 3), dtype=np.uint8)
    changed = None
    if pairs:
        changed = np.concatenate([c for _, _, c in results]) if results else np.zeros(0, dtype=np.int64)
    return GeneratedDataset(spec=spec, factors=factors, images=images, pairs=pairs, changed=changed)
