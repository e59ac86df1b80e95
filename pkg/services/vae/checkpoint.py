"""
Model Checkpoints
Version: 1.0

A checkpoint is the tensor-core parameter file plus a JSON header next to
it (<path>.json) holding the ModelConfig, TrainConfig, NoiseConfig and the
final training step.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from pydantic import ValidationError

from schemas import ModelConfig, NoiseConfig, TrainConfig
from services.errors import FormatError
from services.serialization import read_json, write_json
from services.tensor.params import ParamStore
from services.vae.model import BetaVAE

logger = logging.getLogger(__name__)

HEADER_FORMAT = "disentlab-checkpoint-1"


@dataclass
class Checkpoint:
    model: BetaVAE
    train_config: Optional[TrainConfig]
    noise_config: Optional[NoiseConfig]
    final_step: int
    path: Path


def header_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(
    path: Union[str, Path],
    model: BetaVAE,
    train_config: Optional[TrainConfig] = None,
    noise_config: Optional[NoiseConfig] = None,
    final_step: int = 0,
) -> Path:
    """Write parameters and header. Returns the parameter file path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.params.save(path)
    write_json(header_path(path), {
        "format": HEADER_FORMAT,
        "model": model.config,
        "train": train_config,
        "noise": noise_config,
        "final_step": final_step,
        "num_parameters": model.params.num_parameters,
    })
    logger.info(f"Saved checkpoint {path} ({model.params.num_parameters:,} parameters, step {final_step})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Load a checkpoint and rebuild its model.

    Raises:
        FormatError: Missing header, wrong header format or parameter
            names/shapes that do not match the recorded architecture
    """
    path = Path(path)
    header = read_json(header_path(path))
    if not isinstance(header, dict) or header.get("format") != HEADER_FORMAT:
        raise FormatError("not a disentlab checkpoint header", str(header_path(path)))
    try:
        model_config = ModelConfig.model_validate(header["model"])
        train_config = TrainConfig.model_validate(header["train"]) if header.get("train") else None
        noise_config = NoiseConfig.model_validate(header["noise"]) if header.get("noise") else None
    except (KeyError, ValidationError) as e:
        raise FormatError(f"invalid checkpoint header: {e}", str(header_path(path))) from e

    params = ParamStore.load(path)
    try:
        model = BetaVAE(model_config, params=params)
    except ValueError as e:
        raise FormatError(str(e), str(path)) from e
    return Checkpoint(
        model=model,
        train_config=train_config,
        noise_config=noise_config,
        final_step=int(header.get("final_step", 0)),
        path=path,
    )
