"""
Tests for downstream regressors, OOD splits and transfer scoring
Version: 1.0
"""

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from schemas import (
    ENCODER_TRAIN_HUES,
    GbtConfig,
    MlpConfig,
    RegressorKind,
    Scenario,
    TransferReport,
)
from services.downstream.decomposition import DECOMPOSITION_COLUMNS, factor_decomposition, write_decomposition
from services.downstream.gbt import gbt_fit, gbt_importance, gbt_predict
from services.downstream.mlp import build_mlp, mlp_fit, mlp_predict
from services.downstream.splits import build_ood_split
from services.downstream.transfer import (
    BASE_POOL,
    HELD_OUT_POOL,
    SHIFTED_POOL,
    GbtRegressor,
    MlpRegressor,
    TransferDataSource,
    evaluate_all_transfers,
    evaluate_transfer,
    make_regressor,
    target_factors,
    transfer_errors,
)
from services.errors import ConfigError, ContractViolationError
from services.scene.factors import HUE_FACTOR, FactorDef, FactorSpec
from services.vae.model import BetaVAE


# ============================================================================
# GRADIENT BOOSTED TREES
# ============================================================================

class TestGbt:

    @pytest.fixture
    def step_data(self, rng):
        x = rng.uniform(size=(60, 2))
        y = (x[:, 0] > 0.5).astype(np.float64)
        return x, y

    def test_single_stump_fits_step(self, step_data):
        x, y = step_data
        model = gbt_fit(x, y, GbtConfig(n_trees=1, max_depth=1, shrinkage=1.0, min_samples_leaf=1))
        assert_allclose(gbt_predict(model, x), y, atol=1e-12)
        assert model.train_loss[-1] == pytest.approx(0.0, abs=1e-12)

    def test_importance_on_informative_feature_only(self, step_data):
        x, y = step_data
        model = gbt_fit(x, y, GbtConfig(n_trees=1, max_depth=1, shrinkage=1.0, min_samples_leaf=1))
        importance = gbt_importance(model)
        assert importance[0] > 0
        assert importance[1] == 0.0
        importance[0] = -1.0
        assert gbt_importance(model)[0] > 0

    def test_training_loss_never_increases(self, rng):
        x = rng.uniform(size=(80, 3))
        y = np.sin(4 * x[:, 0]) + x[:, 1] ** 2
        model = gbt_fit(x, y, GbtConfig(n_trees=30, max_depth=3, min_samples_leaf=2))
        assert len(model.train_loss) == 31
        assert np.all(np.diff(model.train_loss) <= 1e-12)

    def test_smooth_target_learned(self, rng):
        x = rng.uniform(size=(300, 2))
        y = np.sin(3 * x[:, 0])
        model = gbt_fit(x, y, GbtConfig(n_trees=100, max_depth=3))
        test = rng.uniform(size=(100, 2))
        assert np.mean(np.abs(gbt_predict(model, test) - np.sin(3 * test[:, 0]))) < 0.05

    def test_subsampling_deterministic_per_seed(self, rng):
        x = rng.uniform(size=(50, 2))
        y = x[:, 0] + x[:, 1]
        config = GbtConfig(n_trees=10, max_depth=2, subsample=0.5, min_samples_leaf=2)
        first = gbt_predict(gbt_fit(x, y, config, seed=7), x)
        assert_array_equal(first, gbt_predict(gbt_fit(x, y, config, seed=7), x))
        assert not np.array_equal(first, gbt_predict(gbt_fit(x, y, config, seed=8), x))

    def test_too_few_rows(self, rng):
        with pytest.raises(ContractViolationError, match="min_samples_leaf"):
            gbt_fit(rng.uniform(size=(9, 2)), np.zeros(9), GbtConfig(min_samples_leaf=5))

    def test_length_mismatch(self, rng):
        with pytest.raises(ContractViolationError):
            gbt_fit(rng.uniform(size=(20, 2)), np.zeros(19), GbtConfig(min_samples_leaf=1))

    def test_empty_features(self):
        with pytest.raises(ContractViolationError):
            gbt_fit(np.zeros((0, 2)), np.zeros(0))

    def test_predict_checks_width(self, step_data, fast_gbt):
        x, y = step_data
        model = gbt_fit(x, y, fast_gbt)
        with pytest.raises(ContractViolationError):
            gbt_predict(model, np.zeros((3, 3)))


# ============================================================================
# MLP
# ============================================================================

class TestMlp:

    def test_graph_shape(self):
        graph = build_mlp(5, MlpConfig(hidden=[7, 4]))
        assert graph.input_shape == (5,)
        assert graph.output_shape == (1,)

    def test_learns_linear_target(self, rng):
        x = rng.normal(size=(200, 2))
        y = 0.5 * x[:, 0] - 0.25 * x[:, 1]
        model = mlp_fit(x, y, MlpConfig(hidden=[16, 16], epochs=60, batch_size=20, learning_rate=1e-2), seed=0)
        assert model.epoch_loss[-1] < 0.2 * model.epoch_loss[0]
        assert np.mean(np.abs(mlp_predict(model, x) - y)) < 0.1

    def test_deterministic_per_seed(self, rng, fast_mlp):
        x = rng.normal(size=(10, 3))
        y = x.sum(axis=1)
        first = mlp_predict(mlp_fit(x, y, fast_mlp, seed=4), x)
        assert_array_equal(first, mlp_predict(mlp_fit(x, y, fast_mlp, seed=4), x))

    def test_constant_feature_tolerated(self, rng, fast_mlp):
        x = np.column_stack([rng.normal(size=10), np.full(10, 2.0)])
        model = mlp_fit(x, x[:, 0], fast_mlp)
        assert np.all(np.isfinite(mlp_predict(model, x)))

    def test_fewer_rows_than_batch(self, rng):
        with pytest.raises(ContractViolationError, match="batch_size"):
            mlp_fit(rng.normal(size=(3, 2)), np.zeros(3), MlpConfig(batch_size=4))

    def test_predict_checks_width(self, rng, fast_mlp):
        model = mlp_fit(rng.normal(size=(6, 2)), np.zeros(6), fast_mlp)
        with pytest.raises(ContractViolationError):
            mlp_predict(model, np.zeros((2, 3)))


# ============================================================================
# SPLITS
# ============================================================================

class TestOodSplits:

    @pytest.mark.parametrize("scenario,d1,d2", [
        (Scenario.OOD1_A, [0.0], [120.0, 150.0, 180.0, 210.0, 270.0, 300.0, 330.0]),
        (Scenario.OOD1_B, [210.0, 270.0, 300.0, 330.0], [0.0, 120.0, 150.0, 180.0]),
        (Scenario.OOD1_C, [0.0, 150.0, 210.0, 300.0], [120.0, 180.0, 270.0, 330.0]),
        (Scenario.OOD2_A, list(ENCODER_TRAIN_HUES), [30.0, 60.0, 90.0, 240.0]),
        (Scenario.OOD2_B, list(ENCODER_TRAIN_HUES), list(ENCODER_TRAIN_HUES)),
    ])
    def test_default_partitions(self, scenario, d1, d2):
        split = build_ood_split(scenario)
        assert split.train_hues == d1
        assert split.eval_hues == d2
        assert split.domain_shift == (scenario == Scenario.OOD2_B)
        assert split.excluded_factor == HUE_FACTOR

    def test_unsorted_training_hues(self):
        split = build_ood_split(Scenario.OOD1_C, train_hues=[330, 0, 150, 120])
        assert split.train_hues == [0.0, 150.0]
        assert split.eval_hues == [120.0, 330.0]

    def test_overlap_rejected(self):
        with pytest.raises(ConfigError, match="overlap"):
            build_ood_split(Scenario.OOD2_A, train_hues=[0, 30, 60], held_out_hues=[30])

    def test_single_training_hue_rejected(self):
        with pytest.raises(ConfigError):
            build_ood_split(Scenario.OOD1_B, train_hues=[0])

    def test_ood1a_needs_red(self):
        with pytest.raises(ConfigError, match="red"):
            build_ood_split(Scenario.OOD1_A, train_hues=[120, 150])

    def test_hues_must_lie_on_grid(self):
        with pytest.raises(ConfigError, match="grid"):
            build_ood_split(Scenario.OOD1_B, available_hues=[0.0, 120.0, 150.0])


# ============================================================================
# TRANSFER SCORING
# ============================================================================

class ColumnRegressor:
    """Predicts the first code dimension unchanged."""

    def fit_predict(self, train_x, train_y, eval_x, seed, factor):
        return eval_x[:, 0]


class ConstantRegressor:

    def __init__(self, value):
        self.value = value

    def fit_predict(self, train_x, train_y, eval_x, seed, factor):
        return np.full(len(eval_x), self.value)


class TestTransferErrors:

    @pytest.fixture
    def line_spec(self):
        return FactorSpec(factors=(
            FactorDef(name="position", cardinality=1001, lo=0.0, hi=1.0),
            FactorDef(name=HUE_FACTOR, cardinality=12, lo=0.0, hi=330.0),
        ))

    @pytest.fixture
    def line_sample(self, line_spec):
        factors = np.column_stack([np.arange(1001), np.zeros(1001, dtype=int)])
        codes = line_spec.normalized(factors)[:, :1]
        return codes, factors

    def test_perfect_predictor_scores_zero(self, line_spec, line_sample):
        codes, factors = line_sample
        errors = transfer_errors(codes, factors, codes, factors, line_spec, ColumnRegressor())
        assert errors == {"position": 0.0}

    def test_constant_midpoint_predictor(self, line_spec, line_sample):
        codes, factors = line_sample
        errors = transfer_errors(codes, factors, codes, factors, line_spec, ConstantRegressor(0.5))
        assert errors["position"] == pytest.approx(0.25, abs=1e-3)

    def test_predictions_clipped(self, line_spec, line_sample):
        codes, factors = line_sample
        errors = transfer_errors(codes, factors, codes, factors, line_spec, ConstantRegressor(7.0))
        assert errors["position"] == pytest.approx(0.5)

    def test_single_valued_factor_not_scored(self):
        spec = FactorSpec(factors=(
            FactorDef(name="position", cardinality=5, lo=0.0, hi=1.0),
            FactorDef(name="fixed", cardinality=1, lo=2.0, hi=2.0),
            FactorDef(name=HUE_FACTOR, cardinality=12, lo=0.0, hi=330.0),
        ))
        assert target_factors(spec) == ["position"]

    def test_empty_partition_rejected(self, line_spec):
        with pytest.raises(ContractViolationError):
            transfer_errors(np.zeros((0, 1)), np.zeros((0, 2)), np.zeros((3, 1)), np.zeros((3, 2), dtype=int),
                            line_spec, ColumnRegressor())

    def test_make_regressor(self, fast_gbt, fast_mlp):
        assert isinstance(make_regressor(RegressorKind.GBT, fast_gbt), GbtRegressor)
        assert make_regressor(RegressorKind.MLP, mlp_config=fast_mlp).config == fast_mlp
        assert isinstance(make_regressor(RegressorKind.MLP), MlpRegressor)


class TestTransferDataSource:

    @pytest.fixture
    def source(self, tiny_dataset, tiny_scene):
        return TransferDataSource(tiny_dataset, scene=tiny_scene, seed=0, pool_size=24)

    def _hues(self, source, dataset, rows):
        hue = source.spec.factor(HUE_FACTOR)
        return set(hue.values()[dataset.factors[rows, source.spec.index(HUE_FACTOR)]].tolist())

    def test_ood1_partitions_stay_on_base_pool(self, source):
        split = source.split(Scenario.OOD1_B, train_size=500, eval_size=500)
        d1, pool, d2 = source.partition(split)
        base = source.pool(BASE_POOL)
        assert pool == BASE_POOL
        assert self._hues(source, base, d1) <= set(split.train_hues)
        assert self._hues(source, base, d2) <= set(split.eval_hues)
        assert not set(d1) & set(d2)

    def test_sizes_capped(self, source):
        d1, _, d2 = source.partition(source.split(Scenario.OOD1_C, train_size=5, eval_size=3))
        assert len(d1) == 5 and len(d2) == 3

    def test_partition_deterministic(self, source):
        split = source.split(Scenario.OOD1_A, train_size=5, eval_size=5)
        first = source.partition(split)
        second = source.partition(split)
        assert_array_equal(first[0], second[0])
        assert_array_equal(first[2], second[2])

    def test_held_out_pool_generated(self, source):
        d1, pool, d2 = source.partition(source.split(Scenario.OOD2_A, train_size=50, eval_size=50))
        assert pool == HELD_OUT_POOL
        held_out = source.pool(HELD_OUT_POOL)
        assert len(held_out) == 24
        assert self._hues(source, held_out, np.arange(len(held_out))) <= {30.0, 60.0, 90.0, 240.0}

    def test_shifted_pool_uses_training_hues(self, source):
        _, pool, _ = source.partition(source.split(Scenario.OOD2_B, train_size=50, eval_size=50))
        shifted = source.pool(SHIFTED_POOL)
        assert pool == SHIFTED_POOL
        assert self._hues(source, shifted, np.arange(len(shifted))) <= set(ENCODER_TRAIN_HUES)

    def test_unknown_pool(self, source):
        with pytest.raises(ContractViolationError, match="pool"):
            source.pool("elsewhere")


class TestEvaluateTransfer:

    @pytest.fixture
    def source(self, tiny_dataset, tiny_scene):
        return TransferDataSource(tiny_dataset, scene=tiny_scene, seed=0, pool_size=20)

    def test_custom_regressor_report(self, tiny_model_config, source):
        encoder = BetaVAE(tiny_model_config, seed=0)
        split = source.split(Scenario.OOD1_B, train_size=30, eval_size=20)
        report = evaluate_transfer(
            encoder, split, RegressorKind.GBT, source, model_id="m0", custom_regressor=ConstantRegressor(0.5),
        )
        assert report.model_id == "m0"
        assert HUE_FACTOR not in report.per_factor
        assert set(report.per_factor) == set(target_factors(source.spec))
        assert report.aggregate == pytest.approx(np.mean(list(report.per_factor.values())))

    @pytest.mark.slow
    def test_all_scenarios_and_regressors(self, tiny_model_config, source, fast_gbt, fast_mlp):
        encoder = BetaVAE(tiny_model_config, seed=0)
        reports = evaluate_all_transfers(
            encoder, source, model_id="m1", noise_enabled=True,
            gbt_config=fast_gbt, mlp_config=fast_mlp, train_size=30, eval_size=20,
        )
        assert len(reports) == 10
        assert {(r.scenario, r.regressor) for r in reports} == {
            (s, k) for s in Scenario for k in RegressorKind
        }
        assert all(r.noise_enabled for r in reports)
        assert all(0.0 <= r.aggregate <= 1.0 for r in reports)


# ============================================================================
# DECOMPOSITION
# ============================================================================

class TestFactorDecomposition:

    @pytest.fixture
    def reports(self):
        return [
            TransferReport.from_errors("a", Scenario.OOD1_A, RegressorKind.GBT, {"x": 0.1, "y": 0.3}),
            TransferReport.from_errors("b", Scenario.OOD1_A, RegressorKind.GBT, {"x": 0.3, "y": 0.3}),
            TransferReport.from_errors("c", Scenario.OOD2_A, RegressorKind.MLP, {"x": 0.5, "y": 0.7}, noise_enabled=True),
        ]

    def test_groups_mean_and_population_std(self, reports):
        table = factor_decomposition(reports)
        assert list(table.columns) == DECOMPOSITION_COLUMNS
        row = table[(table.scenario == "OOD1-A") & (table.factor == "x")].iloc[0]
        assert row.mean_mae == pytest.approx(0.2)
        assert row.std_mae == pytest.approx(0.1)
        assert row["count"] == 2
        single = table[(table.scenario == "OOD2-A") & (table.factor == "y")].iloc[0]
        assert single.std_mae == 0.0
        assert bool(single.noise_enabled)

    def test_empty_rejected(self):
        with pytest.raises(ContractViolationError):
            factor_decomposition([])

    def test_csv_export(self, reports, tmp_path):
        table = factor_decomposition(reports)
        path = tmp_path / "decomposition.csv"
        write_decomposition(table, path)
        loaded = pd.read_csv(path)
        assert list(loaded.columns) == DECOMPOSITION_COLUMNS
        assert len(loaded) == 4
