"""
Transfer Evaluation
Version: 1.0

Downstream transfer of a frozen encoder: encode D1 and D2 to posterior
means, fit one regressor per factor on D1, predict D2, and score the
mean absolute error of [0, 1]-normalized factor values. Cube hue is never
a target. The transfer score is the mean over the remaining factors.

TransferDataSource owns the image pools every scenario draws from:
    base      the encoder-training distribution (training hues, clean renders)
    held_out  the held-out hues (OOD2-A), generated when not supplied
    shifted   domain-shifted renders of the training hues (OOD2-B)
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from schemas import (
    ENCODER_TRAIN_HUES,
    HELD_OUT_HUES,
    DomainShift,
    GbtConfig,
    MlpConfig,
    RegressorKind,
    Scenario,
    SceneConfig,
    SplitSpec,
    TransferReport,
)
from services.downstream.gbt import gbt_fit, gbt_predict
from services.downstream.mlp import mlp_fit, mlp_predict
from services.downstream.splits import build_ood_split
from services.errors import ContractViolationError
from services.scene.factors import HUE_FACTOR, FactorSpec
from services.scene.sampler import GeneratedDataset, generate_records

logger = logging.getLogger(__name__)

BASE_POOL = "base"
HELD_OUT_POOL = "held_out"
SHIFTED_POOL = "shifted"


class Encoder(Protocol):
    def encode_means(self, images: np.ndarray) -> np.ndarray:
        ...


class Regressor(Protocol):
    def fit_predict(
        self, train_x: np.ndarray, train_y: np.ndarray, eval_x: np.ndarray, seed: int, factor: str
    ) -> np.ndarray:
        ...


@dataclass
class GbtRegressor:
    config: GbtConfig

    def fit_predict(self, train_x, train_y, eval_x, seed, factor):
        return gbt_predict(gbt_fit(train_x, train_y, self.config, seed=seed), eval_x)


@dataclass
class MlpRegressor:
    config: MlpConfig

    def fit_predict(self, train_x, train_y, eval_x, seed, factor):
        return mlp_predict(mlp_fit(train_x, train_y, self.config, seed=seed), eval_x)


def make_regressor(
    kind: RegressorKind,
    gbt_config: Optional[GbtConfig] = None,
    mlp_config: Optional[MlpConfig] = None,
) -> Regressor:
    if kind == RegressorKind.GBT:
        return GbtRegressor(gbt_config or GbtConfig())
    return MlpRegressor(mlp_config or MlpConfig())


# ============================================================================
# DATA SOURCE
# ============================================================================

class TransferDataSource:
    """
    Image pools and D1/D2 index partitions for every scenario.

    Generated pools are rendered deterministically from `seed` the first
    time they are needed and kept for later scenarios.
    """

    def __init__(
        self,
        dataset: GeneratedDataset,
        scene: Optional[SceneConfig] = None,
        shift: Optional[DomainShift] = None,
        held_out: Optional[GeneratedDataset] = None,
        shifted: Optional[GeneratedDataset] = None,
        train_hues: Sequence[float] = ENCODER_TRAIN_HUES,
        held_out_hues: Sequence[float] = HELD_OUT_HUES,
        seed: int = 0,
        pool_size: int = 5000,
    ):
        if len(dataset) == 0:
            raise ContractViolationError("transfer needs a non-empty base dataset")
        self.spec: FactorSpec = dataset.spec
        self.scene = scene or SceneConfig(resolution=dataset.resolution)
        self.shift = shift or DomainShift()
        self.train_hues = [float(h) for h in train_hues]
        self.held_out_hues = [float(h) for h in held_out_hues]
        self.seed = seed
        self.pool_size = pool_size
        self._pools: Dict[str, GeneratedDataset] = {BASE_POOL: dataset}
        if held_out is not None:
            self._pools[HELD_OUT_POOL] = held_out
        if shifted is not None:
            self._pools[SHIFTED_POOL] = shifted

    def split(self, scenario: Scenario, train_size: int = 10000, eval_size: int = 5000) -> SplitSpec:
        return build_ood_split(
            scenario,
            self.train_hues,
            self.held_out_hues,
            seed=self.seed,
            train_size=train_size,
            eval_size=eval_size,
            available_hues=self.spec.factor(HUE_FACTOR).values(),
        )

    @staticmethod
    def eval_pool_name(split: SplitSpec) -> str:
        if split.scenario == Scenario.OOD2_A:
            return HELD_OUT_POOL
        if split.scenario == Scenario.OOD2_B:
            return SHIFTED_POOL
        return BASE_POOL

    def pool(self, name: str) -> GeneratedDataset:
        if name not in self._pools:
            self._pools[name] = self._generate(name)
        return self._pools[name]

    def _generate(self, name: str) -> GeneratedDataset:
        if name == HELD_OUT_POOL:
            allowed = self.spec.restricted(HUE_FACTOR, self.spec.hue_indices(self.held_out_hues))
            return generate_records(self.spec, self.scene, self.pool_size, seed=self.seed + 1, allowed=allowed)
        if name == SHIFTED_POOL:
            allowed = self.spec.restricted(HUE_FACTOR, self.spec.hue_indices(self.train_hues))
            return generate_records(
                self.spec, self.scene, self.pool_size, seed=self.seed + 2, shift=self.shift, allowed=allowed
            )
        raise ContractViolationError(f"unknown image pool: {name}")

    def _rows_with_hues(self, dataset: GeneratedDataset, hues: Sequence[float]) -> np.ndarray:
        hue_column = dataset.factors[:, self.spec.index(HUE_FACTOR)]
        wanted = np.asarray(self.spec.hue_indices(hues), dtype=np.int64)
        return np.flatnonzero(np.isin(hue_column, wanted))

    def partition(self, split: SplitSpec) -> Tuple[np.ndarray, str, np.ndarray]:
        """
        D1 rows of the base pool, and D2 as (pool name, rows).

        Raises:
            ContractViolationError: If either partition is empty
        """
        rng = np.random.default_rng([split.seed, list(Scenario).index(split.scenario)])
        d1_candidates = self._rows_with_hues(self.pool(BASE_POOL), split.train_hues)
        eval_name = self.eval_pool_name(split)
        d2_candidates = self._rows_with_hues(self.pool(eval_name), split.eval_hues)
        if d1_candidates.size == 0 or d2_candidates.size == 0:
            raise ContractViolationError(
                f"{split.scenario.value}: empty partition (D1 {d1_candidates.size}, D2 {d2_candidates.size} rows)"
            )
        d1 = np.sort(rng.choice(d1_candidates, size=min(split.train_size, d1_candidates.size), replace=False))
        d2 = np.sort(rng.choice(d2_candidates, size=min(split.eval_size, d2_candidates.size), replace=False))
        return d1, eval_name, d2


# ============================================================================
# SCORING
# ============================================================================

def target_factors(spec: FactorSpec, excluded: str = HUE_FACTOR) -> List[str]:
    """Factors scored by transfer: all but the excluded one and single-valued ones."""
    return [f.name for f in spec.factors if f.name != excluded and f.cardinality > 1]


def transfer_errors(
    train_codes: np.ndarray,
    train_factors: np.ndarray,
    eval_codes: np.ndarray,
    eval_factors: np.ndarray,
    spec: FactorSpec,
    regressor: Regressor,
    seed: int = 0,
    excluded: str = HUE_FACTOR,
) -> Dict[str, float]:
    """Per-factor MAE of clipped predictions on [0, 1]-normalized targets."""
    if len(train_codes) == 0 or len(eval_codes) == 0:
        raise ContractViolationError("transfer needs non-empty D1 and D2")
    y_train = spec.normalized(train_factors)
    y_eval = spec.normalized(eval_factors)
    errors: Dict[str, float] = {}
    for name in target_factors(spec, excluded):
        k = spec.index(name)
        pred = regressor.fit_predict(train_codes, y_train[:, k], eval_codes, seed + k, name)
        pred = np.clip(np.asarray(pred, dtype=np.float64), 0.0, 1.0)
        errors[name] = float(np.mean(np.abs(pred - y_eval[:, k])))
    return errors


class CodeCache:
    """Posterior means of each image pool, computed once per model."""

    def __init__(self, encoder: Encoder, source: TransferDataSource):
        self.encoder = encoder
        self.source = source
        self._codes: Dict[str, np.ndarray] = {}

    def codes(self, pool: str) -> np.ndarray:
        if pool not in self._codes:
            images = self.source.pool(pool).images
            self._codes[pool] = np.asarray(self.encoder.encode_means(images), dtype=np.float64)
            logger.debug(f"Encoded {len(images)} images of pool '{pool}'")
        return self._codes[pool]


def evaluate_transfer(
    encoder: Encoder,
    split: SplitSpec,
    regressor: RegressorKind,
    source: TransferDataSource,
    model_id: str = "model",
    noise_enabled: bool = False,
    gbt_config: Optional[GbtConfig] = None,
    mlp_config: Optional[MlpConfig] = None,
    cache: Optional[CodeCache] = None,
    custom_regressor: Optional[Regressor] = None,
) -> TransferReport:
    """
    Score one (model, split, regressor) triple.

    Args:
        encoder: Anything with encode_means (a BetaVAE)
        split: D1/D2 hue partition
        regressor: Regressor kind recorded in the report
        source: Image pools
        custom_regressor: Replaces the built regressor (oracle tests)
        cache: Shared posterior-mean cache across scenarios
    """
    cache = cache or CodeCache(encoder, source)
    d1, eval_pool, d2 = source.partition(split)
    base = source.pool(BASE_POOL)
    evaluation = source.pool(eval_pool)
    fitter = custom_regressor or make_regressor(regressor, gbt_config, mlp_config)
    per_factor = transfer_errors(
        cache.codes(BASE_POOL)[d1],
        base.factors[d1],
        cache.codes(eval_pool)[d2],
        evaluation.factors[d2],
        source.spec,
        fitter,
        seed=split.seed,
        excluded=split.excluded_factor,
    )
    report = TransferReport.from_errors(model_id, split.scenario, regressor, per_factor, noise_enabled)
    logger.info(
        f"{model_id} {split.scenario.value}/{regressor.value}: transfer error {report.aggregate:.4f} "
        f"(|D1|={len(d1)}, |D2|={len(d2)})"
    )
    return report


def evaluate_all_transfers(
    encoder: Encoder,
    source: TransferDataSource,
    model_id: str = "model",
    noise_enabled: bool = False,
    regressors: Iterable[RegressorKind] = (RegressorKind.GBT, RegressorKind.MLP),
    scenarios: Iterable[Scenario] = tuple(Scenario),
    gbt_config: Optional[GbtConfig] = None,
    mlp_config: Optional[MlpConfig] = None,
    train_size: int = 10000,
    eval_size: int = 5000,
) -> List[TransferReport]:
    """Every scenario x regressor report, encoding each image pool once."""
    cache = CodeCache(encoder, source)
    reports = []
    for scenario in scenarios:
        split = source.split(scenario, train_size=train_size, eval_size=eval_size)
        for kind in regressors:
            reports.append(evaluate_transfer(
                encoder, split, kind, source,
                model_id=model_id,
                noise_enabled=noise_enabled,
                gbt_config=gbt_config,
                mlp_config=mlp_config,
                cache=cache,
            ))
    return reports
