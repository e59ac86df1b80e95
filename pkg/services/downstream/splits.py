"""
OOD Splits
Version: 1.0

Hue partitions of the five transfer scenarios:
    OOD1-A  one hue (red, 0 degrees) -> the other training hues
    OOD1-B  the 4 highest training hues -> the 4 lowest (extrapolation)
    OOD1-C  even sorted-hue ranks -> odd ranks (interpolation)
    OOD2-A  all training hues -> the held-out hues (encoder out of distribution)
    OOD2-B  all training hues -> domain-shifted renders of the training hues
"""

from typing import List, Optional, Sequence

from schemas import ENCODER_TRAIN_HUES, HELD_OUT_HUES, Scenario, SplitSpec
from services.errors import ConfigError

RED_HUE = 0.0


def _hue_partition(scenario: Scenario, train_hues: List[float], held_out: List[float]):
    if scenario == Scenario.OOD1_A:
        if RED_HUE not in train_hues:
            raise ConfigError(f"OOD1-A needs the red hue {RED_HUE} among the training hues")
        return [RED_HUE], [h for h in train_hues if h != RED_HUE]
    if scenario == Scenario.OOD1_B:
        half = len(train_hues) // 2
        return train_hues[-half:], train_hues[:half]
    if scenario == Scenario.OOD1_C:
        return train_hues[0::2], train_hues[1::2]
    if scenario == Scenario.OOD2_A:
        if not held_out:
            raise ConfigError("OOD2-A needs at least one held-out hue")
        return list(train_hues), list(held_out)
    return list(train_hues), list(train_hues)


def build_ood_split(
    scenario: Scenario,
    train_hues: Sequence[float] = ENCODER_TRAIN_HUES,
    held_out_hues: Sequence[float] = HELD_OUT_HUES,
    seed: int = 0,
    train_size: int = 10000,
    eval_size: int = 5000,
    available_hues: Optional[Sequence[float]] = None,
) -> SplitSpec:
    """
    Build the D1/D2 split of one scenario.

    Args:
        scenario: Which transfer setting
        train_hues: Hues the encoder was trained on
        held_out_hues: Hues never shown to the encoder
        seed: Seed of the D1/D2 subsampling
        train_size, eval_size: |D1| and |D2|
        available_hues: Hue grid of the dataset (from its manifest); every
            hue used by the split must lie on it

    Raises:
        ConfigError: Training and held-out hues overlap, hues missing from
            the dataset grid, or too few training hues for the scenario
    """
    train = sorted(float(h) for h in train_hues)
    held_out = sorted(float(h) for h in held_out_hues)
    if len(set(train)) != len(train) or len(train) < 2:
        raise ConfigError(f"need at least two distinct training hues, got {train}")
    if set(train) & set(held_out):
        raise ConfigError(f"training and held-out hues overlap: {sorted(set(train) & set(held_out))}")
    if available_hues is not None:
        grid = [float(h) for h in available_hues]
        missing = [h for h in train + held_out if not any(abs(h - g) <= 1e-6 for g in grid)]
        if missing:
            raise ConfigError(f"hues {missing} are not on the dataset's hue grid {grid}")

    d1_hues, d2_hues = _hue_partition(scenario, train, held_out)
    try:
        return SplitSpec(
            scenario=scenario,
            train_hues=d1_hues,
            eval_hues=d2_hues,
            train_size=train_size,
            eval_size=eval_size,
            domain_shift=scenario == Scenario.OOD2_B,
            seed=seed,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
