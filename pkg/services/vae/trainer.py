"""
VAE Trainer
Version: 1.0

Training step and loop for unsupervised and weakly supervised beta-VAEs.

Loss per step (minimized):
    unsupervised: -mean_b ELBO_b
    weak:         -mean_pairs (ELBO_1 + ELBO_2), both ELBOs on the
                  aggregated posteriors, each decoded from its own sample
The KL weight follows the linear warm-up, gradients are clipped to a
global norm, and Adam runs with the milestone-halved learning rate. The
reconstruction target is always the clean image; noise only reaches the
encoder input.

Random streams (data order, input noise, eps) are independent children
of the training seed, so runs are bit-reproducible.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from schemas import ModelConfig, NoiseConfig, Supervision, TrainConfig
from services.errors import ConfigError, ContractViolationError, DiagnosticError, NonFiniteLossError
from services.scene.sampler import GeneratedDataset
from services.tensor.optim import AdamState, adam_step, clip_global_grad_norm
from services.vae.model import BetaVAE, as_float_images
from services.vae.noise import add_input_noise
from services.vae.objectives import (
    GaussianPosterior,
    adagvae_merge,
    adagvae_merge_backward,
    beta_elbo,
    sigmoid,
    warmup_beta,
)

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["step", "elbo", "recon", "kl", "beta_eff"]


@dataclass
class StepLosses:
    loss: float
    elbo: float
    recon: float
    kl: float
    beta_eff: float = 0.0
    learning_rate: float = 0.0
    clip_factor: float = 1.0


# ============================================================================
# OBJECTIVE
# ============================================================================

def forward_backward(
    model: BetaVAE,
    clean: np.ndarray,
    encoder_input: np.ndarray,
    eps: np.ndarray,
    beta_eff: float,
    weak: bool,
    compute_grad: bool = True,
) -> StepLosses:
    """
    One forward (and optionally backward) pass of the training objective.

    Args:
        model: Model whose params receive the gradients (accumulated)
        clean: Reconstruction targets; for weak supervision the first half
            holds the first image of every pair and the second half the second
        encoder_input: Encoder inputs, same layout (noisy or clean)
        eps: Standard normal draws, (len(clean), d)
        beta_eff: KL weight at this step
        weak: Aggregate the pair posteriors before sampling
        compute_grad: Run the backward pass

    Returns:
        StepLosses with per-observation means of elbo, recon and kl
    """
    params = model.params
    d = model.latent_dim
    m = clean.shape[0]
    if weak and m % 2:
        raise ContractViolationError(f"weak supervision needs an even batch, got {m}")
    if eps.shape != (m, d):
        raise ContractViolationError(f"eps shape {eps.shape} != ({m}, {d})")

    h = model.encoder.forward(encoder_input, params)
    post = GaussianPosterior(mean=h[:, :d], log_variance=h[:, d:])
    if weak:
        half = m // 2
        p1 = GaussianPosterior(post.mean[:half], post.log_variance[:half])
        p2 = GaussianPosterior(post.mean[half:], post.log_variance[half:])
        merged1, merged2, shared = adagvae_merge(p1, p2)
        q = GaussianPosterior(
            mean=np.concatenate([merged1.mean, merged2.mean]),
            log_variance=np.concatenate([merged1.log_variance, merged2.log_variance]),
        )
        units = half
    else:
        q = post
        units = m

    std = np.exp(0.5 * q.log_variance)
    z = q.mean + std * eps
    logits = model.decoder.forward(z, params)
    terms = beta_elbo(clean, logits, q, beta_eff)
    loss = -float(np.sum(terms.elbo)) / units
    losses = StepLosses(
        loss=loss,
        elbo=float(np.mean(terms.elbo)),
        recon=float(np.mean(terms.recon)),
        kl=float(np.mean(terms.kl)),
        beta_eff=beta_eff,
    )
    if not compute_grad:
        return losses

    scale = clean.dtype.type(1.0 / units)
    beta = clean.dtype.type(beta_eff)
    dlogits = (sigmoid(logits) - clean) * scale
    dz = model.decoder.backward(dlogits.astype(clean.dtype, copy=False), params)
    dq_mean = dz + beta * q.mean * scale
    dq_lv = dz * eps * std * clean.dtype.type(0.5) + beta * clean.dtype.type(0.5) * (np.exp(q.log_variance) - 1) * scale
    if weak:
        d1, d2 = adagvae_merge_backward(
            p1, p2, shared,
            GaussianPosterior(dq_mean[:half], dq_lv[:half]),
            GaussianPosterior(dq_mean[half:], dq_lv[half:]),
        )
        dmean = np.concatenate([d1.mean, d2.mean])
        dlv = np.concatenate([d1.log_variance, d2.log_variance])
    else:
        dmean, dlv = dq_mean, dq_lv
    model.encoder.backward(np.concatenate([dmean, dlv], axis=1).astype(clean.dtype, copy=False), params)
    return losses


class VAEObjective:
    """Fixed-batch, fixed-eps training objective as a gradient-check target."""

    def __init__(self, model: BetaVAE, clean: np.ndarray, encoder_input: np.ndarray,
                 eps: np.ndarray, beta_eff: float, weak: bool):
        self.model = model
        self.params = model.params
        self.clean = clean
        self.encoder_input = encoder_input
        self.eps = eps
        self.beta_eff = beta_eff
        self.weak = weak

    def evaluate(self, compute_grad: bool) -> float:
        if compute_grad:
            self.params.zero_grad()
        return forward_backward(
            self.model, self.clean, self.encoder_input, self.eps,
            self.beta_eff, self.weak, compute_grad,
        ).loss


# ============================================================================
# TRAINING STEP
# ============================================================================

def split_pair_batch(images: np.ndarray) -> np.ndarray:
    """Consecutive pair records (2i, 2i+1) -> [all firsts; all seconds]."""
    return np.concatenate([images[0::2], images[1::2]])


def train_step(
    model: BetaVAE,
    batch: np.ndarray,
    adam: AdamState,
    train_config: TrainConfig,
    step: int,
    noise: Optional[NoiseConfig] = None,
    noise_rng: Optional[np.random.Generator] = None,
    eps_rng: Optional[np.random.Generator] = None,
) -> StepLosses:
    """
    One optimization step.

    Args:
        model: Model to update in place
        batch: Clean images (N, R, R, 3); for weak supervision consecutive
            records (2i, 2i+1) form a pair
        adam: Optimizer state, updated in place
        train_config: Schedule and clipping
        step: 0-based step index (warm-up and learning-rate schedule)
        noise: Input noise; None disables it
        noise_rng, eps_rng: Random streams

    Raises:
        NonFiniteLossError: If the loss or an activation is non-finite
    """
    config: ModelConfig = model.config
    weak = config.supervision == Supervision.WEAK
    noise_rng = noise_rng or np.random.default_rng(step)
    eps_rng = eps_rng or np.random.default_rng(step + 1)

    clean = as_float_images(batch, model.dtype)
    if weak:
        clean = split_pair_batch(clean)
    encoder_input = add_input_noise(clean, noise, noise_rng) if noise is not None else clean
    eps = eps_rng.standard_normal((clean.shape[0], model.latent_dim)).astype(model.dtype)
    beta_eff = warmup_beta(step, config.beta, config.warmup_steps)

    model.params.zero_grad()
    try:
        losses = forward_backward(model, clean, encoder_input, eps, beta_eff, weak)
    except DiagnosticError as e:
        raise NonFiniteLossError(step, str(e)) from e
    if not math.isfinite(losses.loss):
        raise NonFiniteLossError(step, f"loss={losses.loss}")

    losses.clip_factor = clip_global_grad_norm(model.params, train_config.grad_clip)
    losses.learning_rate = train_config.learning_rate_at(step)
    adam_step(model.params, adam, learning_rate=losses.learning_rate)
    return losses


# ============================================================================
# TRAINING LOOP
# ============================================================================

@dataclass
class TrainingResult:
    model: BetaVAE
    curve: pd.DataFrame
    final_step: int
    history: List[StepLosses] = field(default_factory=list)


class BatchIterator:
    """Epoch-wise shuffled batches of observation (or pair) indices."""

    def __init__(self, units: int, batch_size: int, rng: np.random.Generator):
        if units < 1:
            raise ContractViolationError("dataset is empty")
        self.units = units
        self.batch_size = min(batch_size, units)
        self.rng = rng
        self._order = rng.permutation(units)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self.units:
            self._order = self.rng.permutation(self.units)
            self._pos = 0
        indices = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return indices


def train(
    dataset: GeneratedDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    noise_config: Optional[NoiseConfig] = None,
    on_interval: Optional[Callable[[dict], None]] = None,
    keep_history: bool = False,
) -> TrainingResult:
    """
    Train one model from scratch.

    Args:
        dataset: Observations, or pairs (consecutive records) for weak supervision
        model_config: Architecture and objective
        train_config: Schedule; its seed drives init, data order, noise and eps
        noise_config: Input noise parameters, used when model_config.noise_enabled
        on_interval: Called with each curve row
        keep_history: Keep per-step losses in the result

    Returns:
        TrainingResult with the trained model and the per-interval curve
    """
    weak = model_config.supervision == Supervision.WEAK
    if dataset.resolution != model_config.resolution:
        raise ConfigError(
            f"dataset resolution {dataset.resolution} != model resolution {model_config.resolution}"
        )
    if weak and not dataset.pairs:
        raise ConfigError("weak supervision needs a pair dataset (generate with --pairs)")

    init_seq, data_seq, noise_seq, eps_seq = np.random.SeedSequence(train_config.seed).spawn(4)
    model = BetaVAE(model_config, seed=init_seq)
    adam = AdamState.for_params(model.params, learning_rate=train_config.learning_rate)
    noise_rng = np.random.default_rng(noise_seq)
    eps_rng = np.random.default_rng(eps_seq)
    noise = (noise_config or NoiseConfig()) if model_config.noise_enabled else None

    units = len(dataset) // 2 if weak else len(dataset)
    batches = BatchIterator(units, train_config.batch_size, np.random.default_rng(data_seq))

    rows = []
    history: List[StepLosses] = []
    window: List[StepLosses] = []
    logger.info(
        f"Training {model_config.supervision.value} beta={model_config.beta} d={model_config.latent_dim} "
        f"noise={model_config.noise_enabled} for {train_config.total_steps} steps "
        f"({model.params.num_parameters:,} parameters)"
    )
    for step in range(train_config.total_steps):
        indices = batches.next()
        if weak:
            indices = np.stack([2 * indices, 2 * indices + 1], axis=1).reshape(-1)
        losses = train_step(
            model, dataset.images[indices], adam, train_config, step,
            noise=noise, noise_rng=noise_rng, eps_rng=eps_rng,
        )
        window.append(losses)
        if keep_history:
            history.append(losses)
        if (step + 1) % train_config.log_interval == 0:
            row = {
                "step": step + 1,
                "elbo": float(np.mean([l.elbo for l in window])),
                "recon": float(np.mean([l.recon for l in window])),
                "kl": float(np.mean([l.kl for l in window])),
                "beta_eff": losses.beta_eff,
            }
            rows.append(row)
            window = []
            logger.info(
                f"step {row['step']}: elbo={row['elbo']:.2f} recon={row['recon']:.2f} "
                f"kl={row['kl']:.2f} beta_eff={row['beta_eff']:.3f} lr={losses.learning_rate:.2e}"
            )
            if on_interval is not None:
                on_interval(row)

    curve = pd.DataFrame(rows, columns=CURVE_COLUMNS)
    return TrainingResult(model=model, curve=curve, final_step=train_config.total_steps, history=history)
