"""
Configuration Module
Version: 1.0

Process settings come from the environment (and an optional .env file).
Experiment settings come from INI-style config files parsed into
validated pydantic models.
"""
import configparser
import logging
import typing
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from schemas import (
    DomainShift,
    GbtConfig,
    GenerateConfig,
    MlpConfig,
    ModelConfig,
    NoiseConfig,
    SceneConfig,
    SweepSpec,
    TrainConfig,
)
from services.errors import ConfigError
from services.scene.factors import FactorDef, FactorSpec

logger = logging.getLogger("configuration")


class Settings(BaseSettings):

    # =========================================================================
    # APPLICATION
    # =========================================================================

    APP_NAME: str = Field(default="disentlab")
    APP_VERSION: str = Field(default="1.0.0")

    # =========================================================================
    # LAB
    # =========================================================================

    DISENTLAB_DATA_DIR: str = Field(default="./data", description="Default dataset root")
    DISENTLAB_LOG_LEVEL: str = Field(default="INFO")
    DISENTLAB_WORKERS: int = Field(default=1, ge=1, description="Default sweep parallelism")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore"
    )

    @property
    def data_dir(self) -> Path:
        return Path(self.DISENTLAB_DATA_DIR)

    @field_validator("DISENTLAB_LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level: {v}")
        return level


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# =========================================================================
# EXPERIMENT CONFIG FILES
# =========================================================================

class LabConfig(BaseModel):
    """Everything one config file can set. Omitted sections keep their defaults."""
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    shift: DomainShift = Field(default_factory=DomainShift)
    gbt: GbtConfig = Field(default_factory=GbtConfig)
    mlp: MlpConfig = Field(default_factory=MlpConfig)
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    generate: GenerateConfig = Field(default_factory=GenerateConfig)
    factors: Optional[List[FactorDef]] = None

    def factor_spec(self) -> FactorSpec:
        if self.factors is None:
            return FactorSpec.default()
        return FactorSpec(factors=tuple(self.factors))


SECTION_MODELS: Dict[str, Type[BaseModel]] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "noise": NoiseConfig,
    "scene": SceneConfig,
    "shift": DomainShift,
    "gbt": GbtConfig,
    "mlp": MlpConfig,
    "generate": GenerateConfig,
}

# Sweep grid keys; the per-model sections above are shared with the sweep.
SWEEP_KEYS = (
    "supervision", "betas", "warmup_steps", "latent_dims", "noise", "seeds",
    "metric_samples", "transfer_train_size", "transfer_eval_size",
)

FACTOR_PREFIX = "factor."


def _is_sequence_field(model_cls: Type[BaseModel], key: str) -> bool:
    field = model_cls.model_fields.get(key)
    if field is None:
        return False
    annotation = field.annotation
    if typing.get_origin(annotation) is typing.Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        annotation = args[0] if len(args) == 1 else annotation
    return typing.get_origin(annotation) in (list, tuple, List, typing.Tuple)


def _section_values(model_cls: Type[BaseModel], items: Dict[str, str]) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for key, raw in items.items():
        if _is_sequence_field(model_cls, key):
            values[key] = [part.strip() for part in raw.split(",") if part.strip()]
        elif raw.strip().lower() in ("none", ""):
            values[key] = None
        else:
            values[key] = raw.strip()
    return values


def parse_lab_config(text: str, source: str = "<string>") -> LabConfig:
    """Parse INI text into a LabConfig."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive field names
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e

    sections: Dict[str, Any] = {}
    factors: List[FactorDef] = []
    sweep_items: Dict[str, str] = {}

    try:
        for name in parser.sections():
            items = dict(parser.items(name))
            if name in SECTION_MODELS:
                sections[name] = SECTION_MODELS[name](**_section_values(SECTION_MODELS[name], items))
            elif name == "sweep":
                unknown = set(items) - set(SWEEP_KEYS)
                if unknown:
                    raise ConfigError(f"{source}: unknown [sweep] keys: {sorted(unknown)}")
                sweep_items = items
            elif name.startswith(FACTOR_PREFIX):
                factors.append(FactorDef(name=name[len(FACTOR_PREFIX):], **items))
            else:
                raise ConfigError(f"{source}: unknown section [{name}]")

        sweep_values = _section_values(SweepSpec, sweep_items)
        for key in ("model", "train", "gbt", "mlp"):
            if key in sections:
                sweep_values[key] = sections[key]
        if "noise" in sections:
            sweep_values["noise_config"] = sections["noise"]
        sections["sweep"] = SweepSpec(**sweep_values)

        config = LabConfig(**sections, factors=factors or None)
        if factors:
            config.factor_spec()  # validates names and ordering
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e

    logger.debug(f"Loaded lab config from {source}: sections={parser.sections()}")
    return config


def load_lab_config(path: Optional[str]) -> LabConfig:
    """Load a config file; None yields the all-defaults configuration."""
    if path is None:
        return LabConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config file ({e})") from e
    return parse_lab_config(text, source=str(path))
