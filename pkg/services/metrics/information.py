"""
Discrete Information Estimates
Version: 1.0

Equal-width discretization of continuous codes and plug-in (empirical
histogram) mutual information in nats.
"""

from typing import Optional

import numpy as np
from sklearn.metrics import mutual_info_score

from services.errors import ContractViolationError

DEFAULT_BINS = 20


def discretize_codes(codes: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """
    Per-column equal-width bins over [min, max].

    The maximum lands in bin (bins - 1); constant columns map to bin 0.
    """
    if bins < 2:
        raise ContractViolationError(f"bins must be >= 2, got {bins}")
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim == 1:
        codes = codes[:, None]
    lo = codes.min(axis=0)
    span = codes.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    binned = np.floor((codes - lo) / safe * bins).astype(np.int64)
    binned = np.clip(binned, 0, bins - 1)
    binned[:, span <= 0] = 0
    return binned


def discrete_mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if x.shape != y.shape:
        raise ContractViolationError(f"samples differ in length: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ContractViolationError(f"mutual information needs n >= 2, got {x.shape[0]}")
    return max(0.0, float(mutual_info_score(x, y)))


def discrete_entropy(x: np.ndarray) -> float:
    return discrete_mutual_information(x, x)


def mutual_information_matrix(discrete_codes: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """(d, F) matrix of I(code_j; factor_k)."""
    discrete_codes = np.asarray(discrete_codes)
    factors = np.asarray(factors)
    if discrete_codes.shape[0] != factors.shape[0]:
        raise ContractViolationError(
            f"{discrete_codes.shape[0]} codes but {factors.shape[0]} factor rows"
        )
    d, f = discrete_codes.shape[1], factors.shape[1]
    mi = np.zeros((d, f))
    for j in range(d):
        for k in range(f):
            mi[j, k] = discrete_mutual_information(discrete_codes[:, j], factors[:, k])
    return mi


def factor_entropies(factors: np.ndarray) -> np.ndarray:
    return np.array([discrete_entropy(factors[:, k]) for k in range(factors.shape[1])])


def prepare_codes(codes: np.ndarray, bins: Optional[int]) -> np.ndarray:
    """Discretize continuous codes; bins=None marks codes that are already discrete."""
    if bins is None:
        return np.asarray(codes)
    return discretize_codes(codes, bins)
