"""
Tests for the beta-VAE: objectives, input noise, architecture, training and checkpoints
Version: 1.0
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from schemas import ModelConfig, NoiseConfig, Supervision, TrainConfig
from services.errors import ConfigError, ContractViolationError, FormatError, NonFiniteLossError
from services.serialization import read_json, write_json
from services.tensor.gradcheck import finite_diff_gradcheck, squared_loss
from services.tensor.optim import AdamState
from services.vae.architecture import build_decoder, build_encoder, num_stages, stage_widths
from services.vae.checkpoint import header_path, load_checkpoint, save_checkpoint
from services.vae.model import BetaVAE, as_float_images
from services.vae.noise import add_input_noise, lowres_variance_gain
from services.vae.objectives import (
    GaussianPosterior,
    adagvae_merge,
    bernoulli_log_likelihood,
    beta_elbo,
    gaussian_kl,
    shared_dimensions,
    symmetrized_kl_per_dim,
    warmup_beta,
)
from services.vae.trainer import VAEObjective, split_pair_batch, train, train_step


def posterior(mean, log_variance):
    return GaussianPosterior(mean=np.asarray(mean, dtype=np.float64), log_variance=np.asarray(log_variance, dtype=np.float64))


def gated(model, gate=0.3):
    for name in model.params.names():
        if name.endswith(".gate"):
            model.params.set_value(name, np.array([gate]))
    return model


# ============================================================================
# OBJECTIVES
# ============================================================================

class TestObjectives:

    def test_kl_of_standard_normal_is_zero(self):
        assert gaussian_kl(posterior([0.0, 0.0], [0.0, 0.0])) == pytest.approx(0.0)

    def test_kl_of_shifted_mean(self):
        assert gaussian_kl(posterior([1.0], [0.0])) == pytest.approx(0.5)

    def test_kl_is_batched(self):
        kl = gaussian_kl(posterior([[0.0], [1.0]], [[0.0], [0.0]]))
        assert_allclose(kl, [0.0, 0.5])

    def test_symmetrized_kl_of_variance_change(self):
        delta = symmetrized_kl_per_dim(posterior([0.0], [0.0]), posterior([0.0], [np.log(4.0)]))
        assert delta[0] == pytest.approx(0.5625)

    def test_symmetrized_kl_is_symmetric(self, rng):
        p1 = posterior(rng.normal(size=4), rng.normal(size=4))
        p2 = posterior(rng.normal(size=4), rng.normal(size=4))
        assert_allclose(symmetrized_kl_per_dim(p1, p2), symmetrized_kl_per_dim(p2, p1))

    def test_bernoulli_at_zero_logits(self):
        x = np.ones((2, 2, 3))
        assert bernoulli_log_likelihood(x, np.zeros_like(x)) == pytest.approx(-12 * np.log(2.0))

    def test_bernoulli_is_stable_for_large_logits(self):
        x = np.array([[[1.0, 0.0, 1.0]]])
        value = bernoulli_log_likelihood(x, np.array([[[800.0, -800.0, -800.0]]]))
        assert value == pytest.approx(-800.0)

    def test_elbo_combines_terms(self):
        x = np.full((1, 2, 2, 3), 0.5)
        terms = beta_elbo(x, np.zeros_like(x), posterior([[1.0, 0.0]], [[0.0, 0.0]]), beta_eff=4.0)
        assert terms.elbo[0] == pytest.approx(terms.recon[0] - 4.0 * 0.5)

    def test_negative_beta_rejected(self):
        x = np.zeros((2, 2, 3))
        with pytest.raises(ContractViolationError):
            beta_elbo(x, x, posterior([0.0, 0.0], [0.0, 0.0]), -1.0)

    @pytest.mark.parametrize("step,expected", [(0, 0.0), (50, 2.0), (100, 4.0), (500, 4.0)])
    def test_warmup(self, step, expected):
        assert warmup_beta(step, 4.0, 100) == pytest.approx(expected)

    def test_no_warmup(self):
        assert warmup_beta(0, 2.0, 0) == 2.0

    def test_negative_step_rejected(self):
        with pytest.raises(ContractViolationError):
            warmup_beta(-1, 1.0, 10)


class TestPairAggregation:
    """Adaptive averaging of the dimensions a pair appears to share."""

    def test_midpoint_threshold(self):
        assert shared_dimensions(np.array([0.1, 5.0, 0.2])).tolist() == [True, False, True]

    def test_equal_divergences_share_everything(self):
        assert shared_dimensions(np.array([0.3, 0.3, 0.3])).all()

    def test_merge_averages_shared_dims(self):
        p1 = posterior([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        p2 = posterior([0.1, 3.0, -0.1], [np.log(3.0), 0.0, 0.0])
        m1, m2, shared = adagvae_merge(p1, p2)
        assert shared.tolist() == [True, False, True]
        assert_allclose(m1.mean, [0.05, 0.0, -0.05])
        assert_allclose(m2.mean, [0.05, 3.0, -0.05])
        assert_allclose(np.exp(m1.log_variance[0]), 2.0)
        assert_allclose(m1.log_variance, m2.log_variance * np.array([1.0, 0.0, 1.0]))

    def test_merge_needs_two_dims(self):
        with pytest.raises(ContractViolationError):
            adagvae_merge(posterior([0.0], [0.0]), posterior([1.0], [0.0]))

    def test_split_pair_batch(self):
        images = np.arange(4)[:, None]
        assert split_pair_batch(images).ravel().tolist() == [0, 2, 1, 3]


# ============================================================================
# INPUT NOISE
# ============================================================================

class TestInputNoise:

    def test_zero_noise_is_identity(self, rng):
        x = rng.uniform(size=(2, 16, 16, 3))
        out = add_input_noise(x, NoiseConfig(subpixel_std=0.0, lowres_std=0.0), rng)
        assert_array_equal(out, x)
        assert out is not x

    def test_output_clamped(self, rng):
        x = np.ones((2, 16, 16, 3))
        out = add_input_noise(x, NoiseConfig(subpixel_std=0.5, lowres_std=0.5), rng)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_lowres_component_is_greyscale(self, rng):
        x = np.full((3, 16, 16, 3), 0.5)
        out = add_input_noise(x, NoiseConfig(subpixel_std=0.0, lowres_std=0.1), rng)
        assert_array_equal(out[..., 0], out[..., 1])
        assert_array_equal(out[..., 1], out[..., 2])

    def test_variance_matches_both_components(self):
        rng = np.random.default_rng(0)
        x = np.full((2000, 16, 16, 3), 0.5)
        noise = NoiseConfig(subpixel_std=0.03, lowres_std=0.15, lowres_grid=8)
        diff = add_input_noise(x, noise, rng) - x
        expected = 0.03 ** 2 + 0.15 ** 2 * lowres_variance_gain(16, 8)
        assert diff.var() == pytest.approx(expected, rel=0.03)

    def test_gain_below_one(self):
        assert 0.0 < lowres_variance_gain(16, 8) < 1.0
        assert lowres_variance_gain(8, 8) == pytest.approx(1.0)

    def test_single_image(self, rng):
        out = add_input_noise(np.full((16, 16, 3), 0.5), NoiseConfig(), rng)
        assert out.shape == (16, 16, 3)

    def test_indivisible_grid_rejected(self, rng):
        with pytest.raises(ContractViolationError):
            add_input_noise(np.zeros((1, 16, 16, 3)), NoiseConfig(lowres_grid=5), rng)


# ============================================================================
# ARCHITECTURE
# ============================================================================

class TestArchitecture:

    @pytest.mark.parametrize("resolution,stages", [(8, 1), (16, 2), (64, 4), (128, 5)])
    def test_stage_count(self, resolution, stages):
        assert num_stages(resolution) == stages

    @pytest.mark.parametrize("resolution", [24, 40, 12])
    def test_unsupported_resolution(self, resolution):
        with pytest.raises(ConfigError):
            num_stages(resolution)

    def test_default_widths_grow_every_other_stage(self):
        assert stage_widths(ModelConfig(resolution=64, base_channels=16)) == [16, 32, 32, 64]

    def test_explicit_widths_length_checked(self):
        with pytest.raises(ConfigError):
            stage_widths(ModelConfig(resolution=16, channel_widths=[4, 4, 4]))

    def test_graph_shapes(self, tiny_model_config):
        encoder = build_encoder(tiny_model_config)
        decoder = build_decoder(tiny_model_config)
        assert encoder.input_shape == (16, 16, 3)
        assert encoder.output_shape == (6,)
        assert decoder.input_shape == (3,)
        assert decoder.output_shape == (16, 16, 3)

    def test_encoder_downsamples_to_4x4(self, tiny_model_config):
        shapes = build_encoder(tiny_model_config).shapes
        assert (4, 4, 4) in shapes

    def test_logvar_head_starts_negative(self, tiny_model_config):
        model = BetaVAE(tiny_model_config, seed=0)
        assert_array_equal(model.params.value("enc.heads.logvar.b"), np.full(3, -1.0))
        posterior = model.encode(np.zeros((16, 16, 3), dtype=np.uint8))
        assert posterior.mean.shape == (3,)

    def test_residual_gates_start_closed(self, tiny_model_config):
        model = BetaVAE(tiny_model_config, seed=0)
        gates = [n for n in model.params.names() if n.endswith(".gate")]
        assert len(gates) == 8
        assert all(model.params.value(n)[0] == 0.0 for n in gates)


# ============================================================================
# MODEL
# ============================================================================

class TestModel:

    @pytest.fixture
    def model(self, tiny_model_config):
        return BetaVAE(tiny_model_config, seed=3)

    def test_uint8_scaling(self):
        assert_allclose(as_float_images(np.array([0, 255], dtype=np.uint8)), [0.0, 1.0])

    def test_reconstruct_range(self, model, tiny_dataset):
        out = model.reconstruct(tiny_dataset.images[:5])
        assert out.shape == (5, 16, 16, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_encode_means_batches(self, model, tiny_dataset):
        whole = model.encode_means(tiny_dataset.images[:10], batch_size=10)
        pieces = model.encode_means(tiny_dataset.images[:10], batch_size=3)
        assert_allclose(whole, pieces, rtol=1e-5, atol=1e-6)

    def test_traversal_shape(self, model, tiny_dataset):
        grid = model.latent_traversal(tiny_dataset.images[0], values_per_dim=5)
        assert grid.shape == (3, 5, 16, 16, 3)

    def test_unused_dimension_gives_constant_row(self, model, tiny_dataset):
        weight = model.params.value("dec.fc1.w")
        weight[1] = 0.0
        grid = model.latent_traversal(tiny_dataset.images[0], dims=[0, 1])
        for column in range(1, grid.shape[1]):
            assert_allclose(grid[1, column], grid[1, 0], rtol=1e-6, atol=1e-7)
        assert not np.array_equal(grid[0, 0], grid[0, -1])

    def test_traversal_dim_checked(self, model, tiny_dataset):
        with pytest.raises(ContractViolationError):
            model.latent_traversal(tiny_dataset.images[0], dims=[3])

    def test_prior_samples(self, model):
        a = model.sample_from_prior(4, 7)
        assert a.shape == (4, 16, 16, 3)
        assert_array_equal(a, model.sample_from_prior(4, 7))

    def test_elbo_decomposes(self, model, tiny_dataset):
        elbo, recon, kl = model.evaluate_elbo(tiny_dataset.images[:8], seed=0)
        assert elbo == pytest.approx(recon - kl)
        assert kl >= 0.0
        assert (elbo, recon, kl) == model.evaluate_elbo(tiny_dataset.images[:8], seed=0)

    def test_elbo_needs_images(self, model):
        with pytest.raises(ContractViolationError):
            model.evaluate_elbo(np.zeros((0, 16, 16, 3), dtype=np.uint8))

    def test_mismatched_params_rejected(self, model):
        other = ModelConfig(resolution=16, latent_dim=4, base_channels=2, fc_width=8)
        with pytest.raises(ContractViolationError):
            BetaVAE(other, params=model.params)


# ============================================================================
# GRADIENTS
# ============================================================================

class TestModelGradients:
    """Whole-model backward passes against central differences."""

    def test_encoder(self, tiny_model_config, tiny_dataset):
        model = gated(BetaVAE(tiny_model_config, seed=0, dtype=np.float64))
        inputs = as_float_images(tiny_dataset.images[:2], np.float64)
        error = finite_diff_gradcheck(
            model.encoder, squared_loss, probe_count=25, step=1e-6, params=model.params, inputs=inputs,
        )
        assert error < 1e-3

    @pytest.mark.parametrize("weak", [False, True])
    def test_training_objective(self, tiny_model_config, tiny_pairs, weak):
        model = gated(BetaVAE(tiny_model_config, seed=1, dtype=np.float64))
        clean = as_float_images(tiny_pairs.images[:4], np.float64)
        if weak:
            clean = split_pair_batch(clean)
        eps = np.random.default_rng(2).standard_normal((4, 3))
        target = VAEObjective(model, clean, clean, eps, beta_eff=2.0, weak=weak)
        assert finite_diff_gradcheck(target, probe_count=25, step=1e-5) < 1e-3

    @pytest.mark.slow
    def test_full_resolution_objective(self):
        config = ModelConfig(resolution=64, latent_dim=4, base_channels=2, fc_width=8)
        model = gated(BetaVAE(config, seed=4, dtype=np.float64))
        clean = np.random.default_rng(5).uniform(size=(2, 64, 64, 3))
        eps = np.random.default_rng(6).standard_normal((2, 4))
        target = VAEObjective(model, clean, clean, eps, beta_eff=1.0, weak=False)
        assert finite_diff_gradcheck(target, probe_count=50, step=1e-5, seed=3) < 1e-3


# ============================================================================
# TRAINING
# ============================================================================

class TestTraining:

    def test_learning_rate_schedule(self):
        config = TrainConfig(total_steps=80, learning_rate=1e-4)
        assert config.milestones() == [30, 60]
        assert config.learning_rate_at(29) == pytest.approx(1e-4)
        assert config.learning_rate_at(30) == pytest.approx(5e-5)
        assert config.learning_rate_at(60) == pytest.approx(2.5e-5)

    def test_milestones_validated(self):
        with pytest.raises(ValidationError):
            TrainConfig(total_steps=10, lr_milestones=[5, 3])
        with pytest.raises(ValidationError):
            TrainConfig(total_steps=10, lr_milestones=[10])

    def test_curve_has_one_row_per_interval(self, tiny_dataset, tiny_model_config, fast_train):
        result = train(tiny_dataset, tiny_model_config, fast_train)
        assert list(result.curve.columns) == ["step", "elbo", "recon", "kl", "beta_eff"]
        assert result.curve["step"].tolist() == [2, 4, 6]
        assert result.final_step == 6
        assert np.isfinite(result.curve["elbo"]).all()

    def test_bit_reproducible(self, tiny_dataset, tiny_model_config, fast_train):
        a = train(tiny_dataset, tiny_model_config, fast_train).model.params
        b = train(tiny_dataset, tiny_model_config, fast_train).model.params
        for name in a.names():
            assert_array_equal(a.value(name), b.value(name))

    def test_seed_changes_model(self, tiny_dataset, tiny_model_config, fast_train):
        a = train(tiny_dataset, tiny_model_config, fast_train).model.params
        b = train(tiny_dataset, tiny_model_config, fast_train.model_copy(update={"seed": 1})).model.params
        assert not np.array_equal(a.value("enc.stem.w"), b.value("enc.stem.w"))

    def test_weak_training_with_noise(self, tiny_pairs, tiny_model_config, fast_train):
        config = tiny_model_config.model_copy(update={"supervision": Supervision.WEAK, "noise_enabled": True, "warmup_steps": 4})
        rows = []
        result = train(tiny_pairs, config, fast_train, NoiseConfig(), on_interval=rows.append, keep_history=True)
        assert len(rows) == 3
        assert len(result.history) == 6
        assert result.history[0].beta_eff == 0.0
        assert result.history[-1].beta_eff == pytest.approx(1.0)
        assert all(h.clip_factor <= 1.0 for h in result.history)

    def test_weak_needs_pairs(self, tiny_dataset, tiny_model_config, fast_train):
        config = tiny_model_config.model_copy(update={"supervision": Supervision.WEAK})
        with pytest.raises(ConfigError, match="pair"):
            train(tiny_dataset, config, fast_train)

    def test_resolution_mismatch(self, tiny_dataset, fast_train):
        config = ModelConfig(resolution=32, latent_dim=3, base_channels=2, fc_width=8)
        with pytest.raises(ConfigError, match="resolution"):
            train(tiny_dataset, config, fast_train)

    def test_non_finite_loss_reports_step(self, tiny_dataset, tiny_model_config, fast_train):
        model = BetaVAE(tiny_model_config, seed=0)
        model.params.value("enc.fc.w")[0, 0] = np.nan
        adam = AdamState.for_params(model.params)
        with pytest.raises(NonFiniteLossError) as info:
            train_step(model, tiny_dataset.images[:4], adam, fast_train, step=5)
        assert info.value.step == 5


# ============================================================================
# CHECKPOINTS
# ============================================================================

class TestCheckpoints:

    @pytest.fixture
    def saved(self, tiny_model_config, fast_train, tmp_path):
        model = BetaVAE(tiny_model_config, seed=2)
        path = save_checkpoint(tmp_path / "models" / "m.ckpt", model, fast_train, NoiseConfig(), final_step=6)
        return model, path

    def test_round_trip(self, saved, tiny_dataset):
        model, path = saved
        checkpoint = load_checkpoint(path)
        assert checkpoint.final_step == 6
        assert checkpoint.model.config == model.config
        assert checkpoint.train_config.total_steps == 6
        assert_array_equal(
            checkpoint.model.encode_means(tiny_dataset.images[:4]),
            model.encode_means(tiny_dataset.images[:4]),
        )

    def test_missing_header(self, saved):
        _, path = saved
        header_path(path).unlink()
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_wrong_header_format(self, saved):
        _, path = saved
        header = read_json(header_path(path))
        header["format"] = "something-else"
        write_json(header_path(path), header)
        with pytest.raises(FormatError, match="header"):
            load_checkpoint(path)

    def test_architecture_mismatch(self, saved):
        _, path = saved
        header = read_json(header_path(path))
        header["model"]["latent_dim"] = 4
        write_json(header_path(path), header)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_corrupt_parameters(self, saved):
        _, path = saved
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(FormatError):
            load_checkpoint(path)
