"""
Rank Statistics
Version: 1.0

Spearman correlation on mid-ranks and the paired sign test.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import binomtest, rankdata

from services.errors import ContractViolationError


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Pearson correlation of average ranks.

    Returns:
        rho in [-1, 1], or NaN when either argument has zero rank variance
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractViolationError(f"spearman needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.shape[0] < 3:
        raise ContractViolationError(f"spearman needs n >= 3, got {x.shape[0]}")
    rx = rankdata(x) - (x.shape[0] + 1) / 2.0
    ry = rankdata(y) - (y.shape[0] + 1) / 2.0
    denom = math.sqrt(float(np.dot(rx, rx)) * float(np.dot(ry, ry)))
    if denom == 0.0:
        return float("nan")
    return float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))


@dataclass
class SignTestResult:
    positives: int
    negatives: int
    ties: int
    p_value: float

    @property
    def pairs(self) -> int:
        return self.positives + self.negatives + self.ties


def sign_test(differences: Sequence[float]) -> SignTestResult:
    """Two-sided exact sign test of paired differences; ties are dropped."""
    diffs = np.asarray(differences, dtype=np.float64)
    positives = int(np.sum(diffs > 0))
    negatives = int(np.sum(diffs < 0))
    ties = int(diffs.size - positives - negatives)
    n = positives + negatives
    p_value = 1.0 if n == 0 else float(binomtest(positives, n, 0.5).pvalue)
    return SignTestResult(positives=positives, negatives=negatives, ties=ties, p_value=p_value)
