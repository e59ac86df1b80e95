"""
Pydantic Schemas
Version: 1.0

Configuration and report contracts shared by every service.
NO DEPENDENCIES on services.
"""

import math
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# === ENUMS ===

class Supervision(str, Enum):
    UNSUPERVISED = "unsupervised"
    WEAK = "weak"


class Scenario(str, Enum):
    OOD1_A = "OOD1-A"
    OOD1_B = "OOD1-B"
    OOD1_C = "OOD1-C"
    OOD2_A = "OOD2-A"
    OOD2_B = "OOD2-B"

    @property
    def is_ood1(self) -> bool:
        return self.value.startswith("OOD1")

    @property
    def slug(self) -> str:
        """Short lowercase form used on the command line and in record keys."""
        return self.value.replace("-", "").lower()

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        """Accept both 'OOD1-A' and 'ood1a'."""
        for scenario in cls:
            if text in (scenario.value, scenario.slug):
                return scenario
        raise ValueError(f"unknown scenario: {text}")


class RegressorKind(str, Enum):
    GBT = "gbt"
    MLP = "mlp"


# === HUE CONSTANTS ===

# Cube hues seen by the encoder during training, and the four held out for OOD2-A.
ENCODER_TRAIN_HUES: Tuple[float, ...] = (0.0, 120.0, 150.0, 180.0, 210.0, 270.0, 300.0, 330.0)
HELD_OUT_HUES: Tuple[float, ...] = (30.0, 60.0, 90.0, 240.0)


# === MODEL & TRAINING ===

class ModelConfig(BaseModel):
    """Architecture and objective of one beta-VAE."""
    model_config = ConfigDict(extra="forbid")

    latent_dim: int = Field(default=10, ge=2)
    beta: float = Field(default=1.0, gt=0)
    warmup_steps: int = Field(default=0, ge=0)
    noise_enabled: bool = False
    supervision: Supervision = Supervision.UNSUPERVISED
    resolution: int = Field(default=64, ge=8)
    base_channels: int = Field(default=16, ge=1)
    channel_widths: Optional[List[int]] = None
    fc_width: int = Field(default=256, ge=2)
    leaky_slope: float = Field(default=0.02, ge=0)

    @field_validator("resolution")
    @classmethod
    def validate_resolution(cls, v: int) -> int:
        if v % 8 != 0:
            raise ValueError(f"resolution must be a multiple of 8, got {v}")
        return v

    @field_validator("channel_widths")
    @classmethod
    def validate_widths(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        if v is not None and (not v or any(w < 1 for w in v)):
            raise ValueError("channel_widths must be a non-empty list of positive integers")
        return v


class NoiseConfig(BaseModel):
    """Two-component input noise added to the encoder input."""
    model_config = ConfigDict(extra="forbid")

    subpixel_std: float = Field(default=0.03, ge=0)
    lowres_std: float = Field(default=0.15, ge=0)
    lowres_grid: int = Field(default=8, ge=1)


class TrainConfig(BaseModel):
    """Optimization schedule of one training run."""
    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=64, ge=1)
    total_steps: int = Field(default=20000, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0)
    lr_milestones: Optional[List[int]] = None
    lr_decay: float = Field(default=0.5, gt=0, le=1)
    grad_clip: float = Field(default=1.0, gt=0)
    seed: int = 0
    log_interval: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def validate_milestones(self) -> "TrainConfig":
        if self.lr_milestones is not None:
            previous = 0
            for m in self.lr_milestones:
                if m <= previous or m >= self.total_steps:
                    raise ValueError(
                        "lr_milestones must be strictly increasing, positive "
                        f"and below total_steps={self.total_steps}: {self.lr_milestones}"
                    )
                previous = m
        return self

    def milestones(self) -> List[int]:
        """Milestones, defaulting to 3/8 and 6/8 of the run."""
        if self.lr_milestones is not None:
            return list(self.lr_milestones)
        candidates = [3 * self.total_steps // 8, 6 * self.total_steps // 8]
        return sorted({m for m in candidates if 0 < m < self.total_steps})

    def learning_rate_at(self, step: int) -> float:
        """Learning rate in effect at (0-based) training step."""
        halvings = sum(1 for m in self.milestones() if step >= m)
        return self.learning_rate * (self.lr_decay ** halvings)


# === SCENE ===

RGB = Tuple[float, float, float]


class SceneConfig(BaseModel):
    """Geometry and palette of the planar finger scene."""
    model_config = ConfigDict(extra="forbid")

    link_lengths: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    base: Tuple[float, float] = (0.0, 0.0)
    # Floor is a bowl: circular arc of this radius about the arm base.
    floor_radius: float = Field(default=2.9555, gt=0)
    view_center: Tuple[float, float] = (0.0, -1.45)
    view_half_extent: float = Field(default=2.6, gt=0)
    cube_edge: float = Field(default=0.4, gt=0)
    resolution: int = Field(default=64, ge=8)
    background_color: RGB = (0.86, 0.88, 0.92)
    stage_color: RGB = (0.46, 0.42, 0.40)
    arm_color: RGB = (0.12, 0.12, 0.16)
    arm_thickness: float = Field(default=0.14, gt=0)
    cube_saturation: float = Field(default=0.9, ge=0, le=1)
    cube_value: float = Field(default=0.9, ge=0, le=1)
    z_order: Literal["arm_over_cube", "cube_over_arm"] = "arm_over_cube"

    @field_validator("resolution")
    @classmethod
    def validate_resolution(cls, v: int) -> int:
        if v % 8 != 0:
            raise ValueError(f"render resolution must be a multiple of 8, got {v}")
        return v

    @field_validator("link_lengths")
    @classmethod
    def validate_links(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(length <= 0 for length in v):
            raise ValueError("link lengths must be positive")
        return v


class DomainShift(BaseModel):
    """Deterministic rendering shift standing in for real-camera images."""
    model_config = ConfigDict(extra="forbid")

    background_delta: float = 0.12
    brightness: float = Field(default=0.85, ge=0)
    noise_std: float = Field(default=0.04, ge=0)
    geometry_jitter: float = Field(default=0.05, ge=0)
    seed: int = 0

    @classmethod
    def identity(cls) -> "DomainShift":
        return cls(background_delta=0.0, brightness=1.0, noise_std=0.0, geometry_jitter=0.0)

    @property
    def is_identity(self) -> bool:
        return (
            self.background_delta == 0.0
            and self.brightness == 1.0
            and self.noise_std == 0.0
            and self.geometry_jitter == 0.0
        )


class GenerateConfig(BaseModel):
    """Dataset generation request."""
    model_config = ConfigDict(extra="forbid")

    count: int = Field(default=50000, ge=0)
    seed: int = 0
    pairs: bool = False
    hues: Optional[List[float]] = None
    shard_size: int = Field(default=1000, ge=1)
    workers: int = Field(default=1, ge=1)


# === DOWNSTREAM ===

class GbtConfig(BaseModel):
    """Gradient boosted regression trees."""
    model_config = ConfigDict(extra="forbid")

    n_trees: int = Field(default=100, ge=1)
    max_depth: int = Field(default=4, ge=1)
    shrinkage: float = Field(default=0.1, gt=0, le=1)
    min_samples_leaf: int = Field(default=5, ge=1)
    subsample: float = Field(default=1.0, gt=0, le=1)


class MlpConfig(BaseModel):
    """Two-hidden-layer regression MLP."""
    model_config = ConfigDict(extra="forbid")

    hidden: List[int] = Field(default_factory=lambda: [256, 256])
    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    leaky_slope: float = Field(default=0.02, ge=0)
    zero_init_output: bool = False


class SplitSpec(BaseModel):
    """D1/D2 construction of one OOD scenario."""
    scenario: Scenario
    train_hues: List[float]
    eval_hues: List[float]
    train_size: int = Field(default=10000, gt=0)
    eval_size: int = Field(default=5000, gt=0)
    excluded_factor: str = "cube_hue"
    domain_shift: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def validate_hues(self) -> "SplitSpec":
        if not self.train_hues or not self.eval_hues:
            raise ValueError("train and eval hue sets must be non-empty")
        if self.scenario.is_ood1 and set(self.train_hues) & set(self.eval_hues):
            raise ValueError(f"{self.scenario.value}: train and eval hues overlap")
        if self.scenario == Scenario.OOD2_A and set(self.eval_hues) & set(self.train_hues):
            raise ValueError("OOD2-A eval hues must be outside the encoder's training hues")
        return self


class TransferReport(BaseModel):
    """Normalized MAE per factor for one (model, split, regressor) triple."""
    model_id: str
    scenario: Scenario
    regressor: RegressorKind
    per_factor: Dict[str, float]
    aggregate: float
    noise_enabled: bool = False

    @model_validator(mode="after")
    def validate_scores(self) -> "TransferReport":
        if not self.per_factor:
            raise ValueError("transfer report needs at least one factor")
        for name, value in self.per_factor.items():
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"normalized MAE of {name} outside [0, 1]: {value}")
        expected = sum(self.per_factor.values()) / len(self.per_factor)
        if not math.isclose(self.aggregate, expected, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"aggregate {self.aggregate} != mean of per-factor errors {expected}")
        return self

    @classmethod
    def from_errors(
        cls,
        model_id: str,
        scenario: Scenario,
        regressor: RegressorKind,
        per_factor: Dict[str, float],
        noise_enabled: bool = False,
    ) -> "TransferReport":
        aggregate = sum(per_factor.values()) / len(per_factor) if per_factor else 0.0
        return cls(
            model_id=model_id,
            scenario=scenario,
            regressor=regressor,
            per_factor=per_factor,
            aggregate=aggregate,
            noise_enabled=noise_enabled,
        )


# === METRICS ===

class MetricReport(BaseModel):
    """Disentanglement scores of one representation plus the raw matrices."""
    mig: float
    dci_disentanglement: float
    dci_completeness: float
    dci_informativeness: float
    sap: float
    modularity: float
    factor_names: List[str]
    mig_gaps: Dict[str, Optional[float]]
    mutual_information: List[List[float]]
    importance: List[List[float]]
    importance_factors: List[str]
    num_samples: int
    bins: int

    @property
    def scores(self) -> Dict[str, float]:
        return {
            "mig": self.mig,
            "dci": self.dci_disentanglement,
            "dci_completeness": self.dci_completeness,
            "dci_informativeness": self.dci_informativeness,
            "sap": self.sap,
            "modularity": self.modularity,
        }


# === HARNESS ===

class ModelRecord(BaseModel):
    """One line of the sweep's JSON-lines record file."""
    config_hash: str
    seed: int
    supervision: Supervision
    beta: float
    warmup_steps: int
    latent_dim: int
    noise_enabled: bool
    status: Literal["completed", "failed"] = "completed"
    error: Optional[str] = None
    elbo: Optional[float] = None
    recon_loss: Optional[float] = None
    kl: Optional[float] = None
    metrics: Dict[str, float] = Field(default_factory=dict)
    # keyed "<scenario slug>/<regressor>", e.g. "ood1a/gbt"
    transfer: Dict[str, float] = Field(default_factory=dict)
    transfer_per_factor: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_finite(self) -> "ModelRecord":
        if self.status != "completed":
            return self
        values = [self.elbo, self.recon_loss, self.kl]
        values += list(self.metrics.values()) + list(self.transfer.values())
        for per_factor in self.transfer_per_factor.values():
            values += list(per_factor.values())
        if any(v is None or not math.isfinite(v) for v in values):
            raise ValueError(f"completed record {self.config_hash} has missing or non-finite fields")
        return self


class SweepSpec(BaseModel):
    """Cartesian hyperparameter grid plus the shared per-model settings."""
    model_config = ConfigDict(extra="forbid")

    supervision: List[Supervision] = Field(
        default_factory=lambda: [Supervision.UNSUPERVISED, Supervision.WEAK]
    )
    betas: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    warmup_steps: List[int] = Field(default_factory=lambda: [0, 1000, 5000])
    latent_dims: List[int] = Field(default_factory=lambda: [10, 25, 50])
    noise: List[bool] = Field(default_factory=lambda: [False, True])
    seeds: List[int] = Field(default_factory=lambda: [0, 1])
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    noise_config: NoiseConfig = Field(default_factory=NoiseConfig)
    gbt: GbtConfig = Field(default_factory=GbtConfig)
    mlp: MlpConfig = Field(default_factory=MlpConfig)
    metric_samples: int = Field(default=10000, ge=10)
    transfer_train_size: int = Field(default=10000, gt=0)
    transfer_eval_size: int = Field(default=5000, gt=0)

    @property
    def grid_size(self) -> int:
        return (
            len(self.supervision) * len(self.betas) * len(self.warmup_steps)
            * len(self.latent_dims) * len(self.noise) * len(self.seeds)
        )

    def grid(self) -> List[Tuple[ModelConfig, int]]:
        """Every (model config, seed) pair in deterministic grid order."""
        points: List[Tuple[ModelConfig, int]] = []
        for supervision in self.supervision:
            for beta in self.betas:
                for warmup in self.warmup_steps:
                    for latent_dim in self.latent_dims:
                        for noise in self.noise:
                            config = ModelConfig(**{
                                **self.model.model_dump(),
                                "supervision": supervision,
                                "beta": beta,
                                "warmup_steps": warmup,
                                "latent_dim": latent_dim,
                                "noise_enabled": noise,
                            })
                            for seed in self.seeds:
                                points.append((config, seed))
        return points
