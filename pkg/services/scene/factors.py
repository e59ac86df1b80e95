"""
Factors of Variation
Version: 1.0

The discrete factor grid of the finger scene. Values of each factor are
linearly spaced over [lo, hi]; a factor of cardinality 1 takes the value lo.
NO DEPENDENCIES on other services.
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from services.errors import ContractViolationError

# One integer index per factor, in FactorSpec order.
FactorTuple = Tuple[int, ...]

JOINT_FACTORS = ("upper_joint", "middle_joint", "lower_joint")
CUBE_FACTORS = ("cube_x", "cube_y", "cube_rotation", "cube_hue")
SCENE_FACTORS = JOINT_FACTORS + CUBE_FACTORS
HUE_FACTOR = "cube_hue"


class FactorDef(BaseModel):
    """One factor: name, cardinality and value range."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    cardinality: int = Field(ge=1, le=0xFFFF)
    lo: float
    hi: float

    @model_validator(mode="after")
    def validate_range(self) -> "FactorDef":
        if self.hi < self.lo:
            raise ValueError(f"factor {self.name}: hi {self.hi} < lo {self.lo}")
        return self

    def values(self) -> np.ndarray:
        if self.cardinality == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.cardinality)

    def value(self, index: int) -> float:
        return float(self.values()[index])

    def index_of(self, value: float, tol: float = 1e-6) -> int:
        """Grid index of a value (hue lists are given in degrees)."""
        matches = np.flatnonzero(np.abs(self.values() - value) <= tol)
        if matches.size == 0:
            raise ContractViolationError(f"value {value} is not on the {self.name} grid")
        return int(matches[0])


class FactorSpec(BaseModel):
    """Ordered factor grid. The renderer requires the seven scene factors by name."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    factors: Tuple[FactorDef, ...]

    @field_validator("factors")
    @classmethod
    def validate_factors(cls, v: Tuple[FactorDef, ...]) -> Tuple[FactorDef, ...]:
        names = [f.name for f in v]
        if not names:
            raise ValueError("factor spec needs at least one factor")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate factor names: {names}")
        if len(names) > 255:
            raise ValueError("at most 255 factors")
        return v

    @classmethod
    def default(cls, cardinalities: Sequence[int] = (10, 10, 10, 10, 10, 8, 12)) -> "FactorSpec":
        """Desk-scale grid: joint angles in radians, cube position in scene units, degrees otherwise."""
        ranges = [
            (-0.65, 0.65),
            (-0.5, 0.5),
            (-0.8, 0.8),
            (-1.1, 1.1),
            (-2.4, -1.8),
            (0.0, 81.0),
            (0.0, 330.0),
        ]
        return cls(factors=tuple(
            FactorDef(name=name, cardinality=card, lo=lo, hi=hi)
            for name, card, (lo, hi) in zip(SCENE_FACTORS, cardinalities, ranges)
        ))

    # === QUERIES ===

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.factors]

    @property
    def cardinalities(self) -> Tuple[int, ...]:
        return tuple(f.cardinality for f in self.factors)

    @property
    def num_factors(self) -> int:
        return len(self.factors)

    @property
    def grid_size(self) -> int:
        return int(np.prod([f.cardinality for f in self.factors], dtype=np.float64))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ContractViolationError(f"unknown factor: {name}") from None

    def factor(self, name: str) -> FactorDef:
        return self.factors[self.index(name)]

    def has_scene_factors(self) -> bool:
        return all(n in self.names for n in SCENE_FACTORS)

    def validate_tuple(self, indices: Sequence[int]) -> FactorTuple:
        if len(indices) != self.num_factors:
            raise ContractViolationError(
                f"factor tuple has {len(indices)} entries, spec has {self.num_factors} factors"
            )
        for f, i in zip(self.factors, indices):
            if not 0 <= int(i) < f.cardinality:
                raise ContractViolationError(f"index {i} out of range for {f.name} (cardinality {f.cardinality})")
        return tuple(int(i) for i in indices)

    def values_of(self, indices: Sequence[int]) -> Dict[str, float]:
        """Real factor values of one tuple, keyed by name."""
        return {f.name: f.value(int(i)) for f, i in zip(self.factors, indices)}

    def value_matrix(self, index_matrix: np.ndarray) -> np.ndarray:
        """Real values of an n x F index matrix (column per factor)."""
        index_matrix = np.asarray(index_matrix)
        columns = [f.values()[index_matrix[:, k]] for k, f in enumerate(self.factors)]
        return np.stack(columns, axis=1) if columns else np.zeros((len(index_matrix), 0))

    def normalized(self, index_matrix: np.ndarray) -> np.ndarray:
        """Indices mapped to [0, 1] per factor (index / (cardinality - 1)); constant factors map to 0."""
        index_matrix = np.asarray(index_matrix, dtype=np.float64)
        denom = np.array([max(c - 1, 1) for c in self.cardinalities], dtype=np.float64)
        return index_matrix / denom

    def restricted(self, name: str, indices: Sequence[int]) -> Dict[int, np.ndarray]:
        """Allowed-index map restricting one factor, for the samplers."""
        k = self.index(name)
        allowed = np.array(sorted(set(int(i) for i in indices)), dtype=np.int64)
        if allowed.size == 0 or allowed[0] < 0 or allowed[-1] >= self.factors[k].cardinality:
            raise ContractViolationError(f"invalid allowed indices for {name}: {list(indices)}")
        return {k: allowed}

    def hue_indices(self, hues: Sequence[float]) -> List[int]:
        hue = self.factor(HUE_FACTOR)
        return [hue.index_of(h) for h in hues]
