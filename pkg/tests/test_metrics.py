"""
Tests for the disentanglement metrics
Version: 1.0
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from sklearn.metrics import mutual_info_score

from schemas import GbtConfig
from services.errors import ContractViolationError, DiagnosticError
from services.metrics.information import (
    discrete_entropy,
    discrete_mutual_information,
    discretize_codes,
    factor_entropies,
    mutual_information_matrix,
)
from services.metrics.report import evaluate_representation, representation_sample
from services.metrics.scores import (
    dci_from_importance,
    dci_scores,
    mig_score,
    modularity_from_mi,
    modularity_score,
    sap_score,
    squared_correlation_matrix,
)


@pytest.fixture
def balanced_grid():
    """Every pair of a 4x4 factor grid, 25 times each."""
    a, b = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    pairs = np.stack([a.ravel(), b.ravel()], axis=1)
    return np.tile(pairs, (25, 1))


# ============================================================================
# INFORMATION
# ============================================================================

class TestDiscretization:

    def test_equal_width_bins_max_in_last(self):
        binned = discretize_codes(np.array([[0.0], [0.5], [1.0]]), bins=2)
        assert_array_equal(binned[:, 0], [0, 1, 1])

    def test_constant_column_maps_to_zero(self, rng):
        codes = np.column_stack([rng.normal(size=50), np.full(50, 3.0)])
        binned = discretize_codes(codes, bins=10)
        assert_array_equal(binned[:, 1], np.zeros(50))
        assert binned[:, 0].min() == 0 and binned[:, 0].max() == 9

    def test_one_bin_rejected(self):
        with pytest.raises(ContractViolationError):
            discretize_codes(np.zeros((4, 2)), bins=1)


class TestMutualInformation:

    def test_identical_variables_give_entropy(self):
        x = np.repeat(np.arange(3), 10)
        assert discrete_mutual_information(x, x) == pytest.approx(math.log(3))
        assert discrete_entropy(x) == pytest.approx(math.log(3))

    def test_independent_variables_give_zero(self, balanced_grid):
        assert discrete_mutual_information(balanced_grid[:, 0], balanced_grid[:, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_matrix_matches_sklearn(self, rng):
        codes = rng.integers(0, 5, size=(80, 3))
        factors = rng.integers(0, 4, size=(80, 2))
        mi = mutual_information_matrix(codes, factors)
        assert mi.shape == (3, 2)
        for i in range(3):
            for k in range(2):
                assert mi[i, k] == pytest.approx(mutual_info_score(codes[:, i], factors[:, k]))

    def test_constant_factor_has_zero_entropy(self, balanced_grid):
        factors = np.column_stack([balanced_grid[:, 0], np.zeros(len(balanced_grid), dtype=int)])
        assert_allclose(factor_entropies(factors), [math.log(4), 0.0], atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ContractViolationError):
            discrete_mutual_information(np.zeros(4), np.zeros(5))


# ============================================================================
# SCORES
# ============================================================================

class TestMig:

    def test_perfect_codes_score_one(self, balanced_grid):
        result = mig_score(balanced_grid.astype(float), balanced_grid, bins=None)
        assert result.score == pytest.approx(1.0)
        assert_allclose(result.gaps, [1.0, 1.0])

    def test_duplicated_code_scores_zero(self, balanced_grid):
        codes = np.column_stack([balanced_grid[:, 0], balanced_grid[:, 0]]).astype(float)
        assert mig_score(codes, balanced_grid, bins=None).score == pytest.approx(0.0, abs=1e-12)

    def test_constant_factor_gap_is_nan(self, balanced_grid):
        factors = np.column_stack([balanced_grid[:, 0], np.ones(len(balanced_grid), dtype=int)])
        result = mig_score(balanced_grid.astype(float), factors, bins=None)
        assert math.isnan(result.gaps[1])
        assert result.score == pytest.approx(1.0)

    def test_all_constant_factors(self, rng):
        with pytest.raises(DiagnosticError):
            mig_score(rng.normal(size=(20, 2)), np.zeros((20, 2), dtype=int))

    def test_needs_two_code_dims(self, balanced_grid):
        with pytest.raises(ContractViolationError):
            mig_score(balanced_grid[:, :1].astype(float), balanced_grid)

    def test_precomputed_mi_reused(self, rng, balanced_grid):
        codes = balanced_grid + rng.normal(scale=0.3, size=balanced_grid.shape)
        mi = mutual_information_matrix(discretize_codes(codes, 5), balanced_grid)
        given = mig_score(codes, balanced_grid, bins=5, mi=mi)
        assert given.score == pytest.approx(mig_score(codes, balanced_grid, bins=5).score)
        assert_allclose(given.mutual_information, mi)
        with pytest.raises(ContractViolationError):
            mig_score(codes, balanced_grid, bins=5, mi=mi[:1])


class TestDci:

    @pytest.mark.parametrize("importance,expected", [
        (np.eye(2), (1.0, 1.0)),
        (np.ones((2, 2)), (0.0, 0.0)),
        (np.array([[1.0, 0.0], [1.0, 0.0]]), (1.0, 0.0)),
        (np.zeros((3, 2)), (0.0, 0.0)),
    ])
    def test_from_importance(self, importance, expected):
        assert dci_from_importance(importance) == pytest.approx(expected, abs=1e-12)

    def test_negative_importance_rejected(self):
        with pytest.raises(ContractViolationError):
            dci_from_importance(np.array([[1.0, -0.1]]))

    @pytest.mark.slow
    def test_axis_aligned_codes(self, rng):
        factors = rng.integers(0, 5, size=(300, 2))
        codes = factors / 4.0 + rng.normal(scale=0.01, size=factors.shape)
        result = dci_scores(codes, factors, GbtConfig(n_trees=50, max_depth=3), seed=0)
        assert result.disentanglement > 0.8
        assert result.completeness > 0.8
        assert result.informativeness > 0.85
        assert result.importance.shape == (2, 2)
        assert result.factor_indices == [0, 1]

    def test_constant_factor_excluded(self, rng, fast_gbt):
        factors = np.column_stack([rng.integers(0, 3, size=40), np.zeros(40, dtype=int)])
        result = dci_scores(rng.normal(size=(40, 2)), factors, fast_gbt)
        assert result.factor_indices == [0]
        assert result.importance.shape == (2, 1)

    def test_all_constant_factors(self, rng, fast_gbt):
        with pytest.raises(DiagnosticError):
            dci_scores(rng.normal(size=(40, 2)), np.zeros((40, 3), dtype=int), fast_gbt)


class TestSap:

    def test_perfect_codes_score_one(self, balanced_grid):
        result = sap_score(balanced_grid.astype(float), balanced_grid)
        assert result.score == pytest.approx(1.0)
        assert_allclose(result.score_matrix, np.eye(2), atol=1e-12)

    def test_linear_fit_r2(self, rng):
        x = rng.normal(size=100)
        r2 = squared_correlation_matrix(x[:, None], (3.0 * x - 1.0)[:, None])
        assert r2[0, 0] == pytest.approx(1.0)

    def test_constant_code_has_zero_r2(self, balanced_grid):
        codes = np.column_stack([np.zeros(len(balanced_grid)), balanced_grid[:, 0]]).astype(float)
        assert_array_equal(squared_correlation_matrix(codes, balanced_grid.astype(float))[0], [0.0, 0.0])


class TestModularity:

    def test_one_factor_per_code(self):
        assert modularity_from_mi(np.eye(2)) == pytest.approx(1.0)

    def test_code_shared_by_two_factors(self):
        assert modularity_from_mi(np.array([[1.0, 1.0]])) == pytest.approx(0.0)

    def test_uninformative_code_counts_as_zero(self):
        assert modularity_from_mi(np.array([[1.0, 0.0], [0.0, 0.0]])) == pytest.approx(0.5)

    def test_single_factor_rejected(self):
        with pytest.raises(ContractViolationError):
            modularity_from_mi(np.ones((2, 1)))

    def test_from_codes(self, balanced_grid):
        assert modularity_score(balanced_grid.astype(float), balanced_grid, bins=None) == pytest.approx(1.0)


# ============================================================================
# DEFINITION ORACLES
# ============================================================================

def brute_mi(x, y):
    n = len(x)
    total = 0.0
    for a in set(x.tolist()):
        for b in set(y.tolist()):
            joint = np.sum((x == a) & (y == b)) / n
            if joint > 0:
                total += joint * math.log(joint / ((np.sum(x == a) / n) * (np.sum(y == b) / n)))
    return total


def brute_mi_matrix(codes, factors):
    return np.array([[brute_mi(codes[:, i], factors[:, k]) for k in range(factors.shape[1])]
                     for i in range(codes.shape[1])])


def brute_mig(codes, factors):
    mi = brute_mi_matrix(codes, factors)
    gaps = []
    for k in range(factors.shape[1]):
        h = brute_mi(factors[:, k], factors[:, k])
        top = sorted(mi[:, k], reverse=True)
        gaps.append((top[0] - top[1]) / h)
    return float(np.mean(gaps))


def brute_sap(codes, factors):
    gaps = []
    for k in range(factors.shape[1]):
        r2 = sorted((np.corrcoef(codes[:, i], factors[:, k])[0, 1] ** 2 for i in range(codes.shape[1])), reverse=True)
        gaps.append(r2[0] - r2[1])
    return float(np.mean(gaps))


def brute_modularity(codes, factors):
    mi = brute_mi_matrix(codes, factors)
    f = factors.shape[1]
    scores = []
    for row in mi:
        theta = max(row)
        best = int(np.argmax(row))
        off = sum(row[j] ** 2 for j in range(f) if j != best)
        scores.append(1.0 - off / (theta ** 2 * (f - 1)) if theta > 0 else 0.0)
    return float(np.mean(scores))


def brute_dci(importance):
    d, f = importance.shape
    total = importance.sum()
    disentanglement = 0.0
    for i in range(d):
        p = importance[i] / importance[i].sum()
        h = -sum(v * math.log(v, f) for v in p if v > 0)
        disentanglement += importance[i].sum() / total * (1.0 - h)
    completeness = 0.0
    for k in range(f):
        p = importance[:, k] / importance[:, k].sum()
        h = -sum(v * math.log(v, d) for v in p if v > 0)
        completeness += importance[:, k].sum() / total * (1.0 - h)
    return disentanglement, completeness


class TestDefinitionOracles:
    """Scores agree with direct evaluation of their definitions on small random instances."""

    @pytest.fixture(params=range(20))
    def instance(self, request):
        rng = np.random.default_rng(request.param)
        factors = rng.integers(0, 3, size=(60, 2))
        codes = np.column_stack([
            factors[:, 0] + rng.integers(0, 2, size=60),
            rng.integers(0, 4, size=60),
            factors[:, 1] * 2 + rng.integers(0, 3, size=60),
        ])
        return rng, codes, factors

    def test_mig(self, instance):
        _, codes, factors = instance
        assert mig_score(codes, factors, bins=None).score == pytest.approx(brute_mig(codes, factors), abs=1e-9)

    def test_sap(self, instance):
        rng, codes, factors = instance
        noisy = codes + rng.normal(scale=0.1, size=codes.shape)
        assert sap_score(noisy, factors).score == pytest.approx(brute_sap(noisy, factors), abs=1e-9)

    def test_modularity(self, instance):
        _, codes, factors = instance
        assert modularity_score(codes, factors, bins=None) == pytest.approx(brute_modularity(codes, factors), abs=1e-9)

    def test_dci_from_importance(self, instance):
        rng, _, _ = instance
        importance = rng.uniform(0.01, 1.0, size=(4, 3))
        assert dci_from_importance(importance) == pytest.approx(brute_dci(importance), abs=1e-9)


# ============================================================================
# REPORT
# ============================================================================

class MeanPixelEncoder:
    """Two code dims from image statistics."""

    def encode_means(self, images):
        x = images.reshape(images.shape[0], -1).astype(np.float64)
        return np.column_stack([x.mean(axis=1), x.std(axis=1)])


class TestRepresentationReport:

    def test_sample_rows_and_shapes(self, tiny_dataset):
        codes, factors = representation_sample(MeanPixelEncoder(), tiny_dataset, 50, seed=3)
        assert codes.shape == (50, 2)
        assert factors.shape == (50, tiny_dataset.factors.shape[1])
        again, _ = representation_sample(MeanPixelEncoder(), tiny_dataset, 50, seed=3)
        assert_array_equal(codes, again)

    def test_sample_capped_at_dataset_size(self, tiny_dataset):
        codes, _ = representation_sample(MeanPixelEncoder(), tiny_dataset, 10_000)
        assert codes.shape[0] == len(tiny_dataset)

    def test_report_scores_in_unit_interval(self, rng, fast_gbt):
        factors = np.column_stack([
            rng.integers(0, 4, size=120), rng.integers(0, 3, size=120), np.zeros(120, dtype=int),
        ])
        codes = np.column_stack([factors[:, 0], factors[:, 1], rng.normal(size=120)]) + rng.normal(scale=0.05, size=(120, 3))
        report = evaluate_representation(codes, factors, ["a", "b", "fixed"], gbt_config=fast_gbt)
        assert set(report.scores) == {"mig", "dci", "dci_completeness", "dci_informativeness", "sap", "modularity"}
        assert all(0.0 <= v <= 1.0 for v in report.scores.values())
        assert report.mig_gaps["fixed"] is None
        assert report.importance_factors == ["a", "b"]
        assert report.num_samples == 120
        assert np.asarray(report.mutual_information).shape == (3, 3)

    def test_mutual_information_computed_once(self, rng, fast_gbt, monkeypatch):
        calls = []

        def counting(discrete_codes, factors):
            calls.append(discrete_codes.shape)
            return mutual_information_matrix(discrete_codes, factors)

        monkeypatch.setattr("services.metrics.report.mutual_information_matrix", counting)
        monkeypatch.setattr("services.metrics.scores.mutual_information_matrix", counting)
        factors = rng.integers(0, 3, size=(80, 2))
        codes = factors + rng.normal(scale=0.1, size=(80, 2))
        evaluate_representation(codes, factors, gbt_config=fast_gbt)
        assert calls == [(80, 2)]

    def test_names_must_match_factors(self, rng):
        with pytest.raises(ContractViolationError):
            evaluate_representation(rng.normal(size=(20, 2)), rng.integers(0, 3, size=(20, 2)), ["only_one"])
