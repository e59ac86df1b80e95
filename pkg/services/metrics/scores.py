"""
Disentanglement Scores
Version: 1.0

MIG, DCI (disentanglement, completeness, informativeness), SAP and
Modularity over a (codes, factors) sample. Codes are posterior means
(n, d); factors are grid indices (n, F). Every score lies in [0, 1].
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.stats import entropy

from schemas import GbtConfig
from services.downstream.gbt import gbt_fit, gbt_importance, gbt_predict
from services.errors import ContractViolationError, DiagnosticError
from services.metrics.information import (
    DEFAULT_BINS,
    factor_entropies,
    mutual_information_matrix,
    prepare_codes,
)

logger = logging.getLogger(__name__)


def _check_sample(codes: np.ndarray, factors: np.ndarray, min_dims: int = 1) -> None:
    if codes.ndim != 2 or factors.ndim != 2:
        raise ContractViolationError(f"codes {codes.shape} and factors {factors.shape} must be matrices")
    if codes.shape[0] != factors.shape[0]:
        raise ContractViolationError(f"{codes.shape[0]} codes but {factors.shape[0]} factor rows")
    if codes.shape[0] < 2:
        raise ContractViolationError(f"metrics need n >= 2 samples, got {codes.shape[0]}")
    if codes.shape[1] < min_dims:
        raise ContractViolationError(f"need at least {min_dims} code dims, got {codes.shape[1]}")


def _unit(value: float) -> float:
    return float(min(1.0, max(0.0, value)))


# ============================================================================
# MIG
# ============================================================================

@dataclass
class MigResult:
    score: float
    gaps: np.ndarray            # (F,), NaN for skipped factors
    mutual_information: np.ndarray
    entropies: np.ndarray


def mig_score(
    codes: np.ndarray,
    factors: np.ndarray,
    bins: Optional[int] = DEFAULT_BINS,
    mi: Optional[np.ndarray] = None,
) -> MigResult:
    """
    Mutual information gap.

    Per factor, the gap between the two largest code MIs divided by the
    factor entropy; the score is the mean over factors with non-zero entropy.
    A precomputed (d, F) MI matrix of the discretized codes may be passed as `mi`.

    Raises:
        DiagnosticError: If every factor is constant
    """
    codes, factors = np.asarray(codes), np.asarray(factors)
    _check_sample(codes, factors, min_dims=2)
    if mi is None:
        mi = mutual_information_matrix(prepare_codes(codes, bins), factors)
    else:
        mi = np.asarray(mi, dtype=np.float64)
        if mi.shape != (codes.shape[1], factors.shape[1]):
            raise ContractViolationError(f"MI matrix {np.shape(mi)} does not match ({codes.shape[1]}, {factors.shape[1]})")
    h = factor_entropies(factors)
    gaps = np.full(factors.shape[1], np.nan)
    for k in range(factors.shape[1]):
        if h[k] <= 0:
            continue
        top = np.sort(mi[:, k])[::-1]
        gaps[k] = _unit((top[0] - top[1]) / h[k])
    if np.all(np.isnan(gaps)):
        raise DiagnosticError("MIG undefined: every factor is constant in the sample")
    return MigResult(score=_unit(np.nanmean(gaps)), gaps=gaps, mutual_information=mi, entropies=h)


# ============================================================================
# DCI
# ============================================================================

@dataclass
class DciResult:
    disentanglement: float
    completeness: float
    informativeness: float
    importance: np.ndarray      # (d, F'), F' = non-constant factors
    factor_indices: List[int]


def _one_minus_entropy(rows: np.ndarray, base: int) -> np.ndarray:
    if base < 2:
        return np.ones(rows.shape[0])
    mass = rows.sum(axis=1, keepdims=True)
    probs = rows / np.where(mass > 0, mass, 1.0)
    return 1.0 - entropy(probs, base=base, axis=1)


def dci_from_importance(importance: np.ndarray):
    """(disentanglement, completeness) of a (d, F) non-negative importance matrix."""
    r = np.asarray(importance, dtype=np.float64)
    if r.ndim != 2 or np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ContractViolationError("importance must be a finite non-negative matrix")
    total = r.sum()
    if total <= 0:
        return 0.0, 0.0
    d, f = r.shape
    code_weight = r.sum(axis=1) / total
    factor_weight = r.sum(axis=0) / total
    per_code = np.where(code_weight > 0, _one_minus_entropy(r, f), 0.0)
    per_factor = np.where(factor_weight > 0, _one_minus_entropy(r.T, d), 0.0)
    return _unit(np.sum(code_weight * per_code)), _unit(np.sum(factor_weight * per_factor))


def dci_scores(
    codes: np.ndarray,
    factors: np.ndarray,
    gbt_config: Optional[GbtConfig] = None,
    seed: int = 0,
    test_fraction: float = 0.2,
) -> DciResult:
    """
    DCI from boosted-tree split-gain importance.

    One GBT per non-constant factor is fit on a random (1 - test_fraction)
    share of the sample; informativeness is the mean of 1 - MAE of the
    clipped predictions of [0, 1]-scaled factor indices on the rest.
    """
    codes = np.asarray(codes, dtype=np.float64)
    factors = np.asarray(factors)
    _check_sample(codes, factors)
    config = gbt_config or GbtConfig()
    n = codes.shape[0]
    n_test = max(1, int(round(test_fraction * n)))
    if n - n_test < 2 * config.min_samples_leaf:
        raise ContractViolationError(f"dci_scores needs more samples, got {n}")

    order = np.random.default_rng(seed).permutation(n)
    test, train = order[:n_test], order[n_test:]
    kept: List[int] = []
    columns = []
    quality = []
    for k in range(factors.shape[1]):
        values = factors[:, k].astype(np.float64)
        lo, hi = values.min(), values.max()
        if hi == lo:
            logger.warning(f"DCI: factor {k} is constant in the sample and is excluded")
            continue
        target = (values - lo) / (hi - lo)
        model = gbt_fit(codes[train], target[train], config, seed=seed + k)
        pred = np.clip(gbt_predict(model, codes[test]), 0.0, 1.0)
        quality.append(1.0 - float(np.mean(np.abs(pred - target[test]))))
        columns.append(gbt_importance(model))
        kept.append(k)
    if not kept:
        raise DiagnosticError("DCI undefined: every factor is constant in the sample")

    importance = np.stack(columns, axis=1)
    disentanglement, completeness = dci_from_importance(importance)
    return DciResult(
        disentanglement=disentanglement,
        completeness=completeness,
        informativeness=_unit(np.mean(quality)),
        importance=importance,
        factor_indices=kept,
    )


# ============================================================================
# SAP
# ============================================================================

@dataclass
class SapResult:
    score: float
    score_matrix: np.ndarray    # (d, F) squared correlations


def squared_correlation_matrix(codes: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """R^2 of the one-variable linear fit of each factor on each code dim (0 for constant columns)."""
    x = codes - codes.mean(axis=0)
    y = factors - factors.mean(axis=0)
    cov = x.T @ y
    var_x = np.sum(x ** 2, axis=0)
    var_y = np.sum(y ** 2, axis=0)
    denom = np.outer(var_x, var_y)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(denom > 0, cov ** 2 / denom, 0.0)
    return np.clip(r2, 0.0, 1.0)


def sap_score(codes: np.ndarray, factors: np.ndarray) -> SapResult:
    codes = np.asarray(codes, dtype=np.float64)
    factors = np.asarray(factors, dtype=np.float64)
    _check_sample(codes, factors, min_dims=2)
    s = squared_correlation_matrix(codes, factors)
    gaps = []
    for k in range(factors.shape[1]):
        if np.ptp(factors[:, k]) == 0:
            continue
        top = np.sort(s[:, k])[::-1]
        gaps.append(top[0] - top[1])
    if not gaps:
        raise DiagnosticError("SAP undefined: every factor is constant in the sample")
    return SapResult(score=_unit(np.mean(gaps)), score_matrix=s)


# ============================================================================
# MODULARITY
# ============================================================================

def modularity_from_mi(mi: np.ndarray) -> float:
    """Mean over code dims of 1 - off-maximum MI mass / (theta^2 (F - 1))."""
    mi = np.asarray(mi, dtype=np.float64)
    d, f = mi.shape
    if f < 2:
        raise ContractViolationError(f"modularity needs F >= 2 factors, got {f}")
    scores = np.zeros(d)
    for i in range(d):
        theta = mi[i].max()
        if theta <= 0:
            continue
        off = np.delete(mi[i], int(np.argmax(mi[i])))
        scores[i] = 1.0 - np.sum(off ** 2) / (theta ** 2 * (f - 1))
    return _unit(scores.mean())


def modularity_score(
    codes: np.ndarray,
    factors: np.ndarray,
    bins: Optional[int] = DEFAULT_BINS,
    mi: Optional[np.ndarray] = None,
) -> float:
    codes, factors = np.asarray(codes), np.asarray(factors)
    _check_sample(codes, factors)
    if mi is None:
        mi = mutual_information_matrix(prepare_codes(codes, bins), factors)
    return modularity_from_mi(mi)
