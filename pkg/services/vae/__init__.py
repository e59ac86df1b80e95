"""
Beta-VAE models, objectives and training.
"""

from services.vae.architecture import build_decoder, build_encoder, num_stages, stage_widths
from services.vae.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from services.vae.model import BetaVAE, as_float_images
from services.vae.noise import add_input_noise, lowres_variance_gain
from services.vae.objectives import (
    ElboTerms,
    GaussianPosterior,
    adagvae_merge,
    beta_elbo,
    gaussian_kl,
    reparameterize,
    symmetrized_kl_per_dim,
    warmup_beta,
)
from services.vae.trainer import TrainingResult, VAEObjective, forward_backward, train, train_step

__all__ = [
    "BetaVAE",
    "Checkpoint",
    "ElboTerms",
    "GaussianPosterior",
    "TrainingResult",
    "VAEObjective",
    "adagvae_merge",
    "add_input_noise",
    "as_float_images",
    "beta_elbo",
    "build_decoder",
    "build_encoder",
    "forward_backward",
    "gaussian_kl",
    "load_checkpoint",
    "lowres_variance_gain",
    "num_stages",
    "reparameterize",
    "save_checkpoint",
    "stage_widths",
    "symmetrized_kl_per_dim",
    "train",
    "train_step",
    "warmup_beta",
]
