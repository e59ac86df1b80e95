"""
VAE Objectives
Version: 1.0

Diagonal Gaussian posteriors, the beta-weighted ELBO with a Bernoulli
decoder, linear KL warm-up, and the adaptive pair aggregation used for
weak supervision (per-dimension symmetrized KL, midpoint threshold,
averaged Gaussians on the shared dimensions).

Functions accept a single posterior (d,) or a batch (B, d). Gradients of
the aggregation treat the shared-dimension mask as a constant.
"""

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import expit

from services.errors import ContractViolationError

LN2 = math.log(2.0)


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ContractViolationError(
                f"posterior mean {self.mean.shape} and log-variance {self.log_variance.shape} differ"
            )

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_variance)

    @property
    def latent_dim(self) -> int:
        return int(self.mean.shape[-1])


@dataclass
class ElboTerms:
    elbo: Union[float, np.ndarray]
    recon: Union[float, np.ndarray]
    kl: Union[float, np.ndarray]


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


# ============================================================================
# ELBO
# ============================================================================

def bernoulli_log_likelihood(x: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Per-sample sum of x*log(sigmoid(l)) + (1-x)*log(1-sigmoid(l)), computed stably."""
    if x.shape != logits.shape:
        raise ContractViolationError(f"image shape {x.shape} != logits shape {logits.shape}")
    terms = x * logits - softplus(logits)
    if terms.ndim <= 3:
        return terms.sum()
    return terms.reshape(terms.shape[0], -1).sum(axis=1)


def gaussian_kl(post: GaussianPosterior) -> np.ndarray:
    """KL(q || N(0, I)) summed over the latent dimensions."""
    lv = post.log_variance
    return 0.5 * np.sum(post.mean ** 2 + np.exp(lv) - lv - 1.0, axis=-1)


def beta_elbo(
    x: np.ndarray,
    logits: np.ndarray,
    post: GaussianPosterior,
    beta_eff: float,
) -> ElboTerms:
    """elbo = recon - beta_eff * kl, per sample for batches, scalars otherwise."""
    if beta_eff < 0:
        raise ContractViolationError(f"beta_eff must be >= 0, got {beta_eff}")
    recon = bernoulli_log_likelihood(x, logits)
    kl = gaussian_kl(post)
    elbo = recon - beta_eff * kl
    if np.ndim(elbo) == 0:
        return ElboTerms(elbo=float(elbo), recon=float(recon), kl=float(kl))
    return ElboTerms(elbo=elbo, recon=recon, kl=kl)


def warmup_beta(step: int, beta: float, warmup_steps: int) -> float:
    """Linear ramp from 0 to beta over warmup_steps."""
    if step < 0:
        raise ContractViolationError(f"step must be >= 0, got {step}")
    if warmup_steps <= 0:
        return float(beta)
    return float(beta) * min(1.0, step / warmup_steps)


# ============================================================================
# WEAK SUPERVISION
# ============================================================================

def _directed_kl(mean1, lv1, mean2, lv2) -> np.ndarray:
    return 0.5 * (lv2 - lv1 + (np.exp(lv1) + (mean1 - mean2) ** 2) / np.exp(lv2) - 1.0)


def symmetrized_kl_per_dim(p1: GaussianPosterior, p2: GaussianPosterior) -> np.ndarray:
    """0.5 * KL(p1 || p2) + 0.5 * KL(p2 || p1) per latent dimension."""
    if p1.mean.shape != p2.mean.shape:
        raise ContractViolationError(f"posterior shapes differ: {p1.mean.shape} vs {p2.mean.shape}")
    forward = _directed_kl(p1.mean, p1.log_variance, p2.mean, p2.log_variance)
    backward = _directed_kl(p2.mean, p2.log_variance, p1.mean, p1.log_variance)
    return 0.5 * (forward + backward)


def shared_dimensions(delta: np.ndarray) -> np.ndarray:
    """Dims with divergence below the midpoint of (max, min); all dims when max == min."""
    hi = delta.max(axis=-1, keepdims=True)
    lo = delta.min(axis=-1, keepdims=True)
    threshold = 0.5 * (hi + lo)
    return (delta < threshold) | (hi == lo)


def adagvae_merge(
    p1: GaussianPosterior,
    p2: GaussianPosterior,
) -> Tuple[GaussianPosterior, GaussianPosterior, np.ndarray]:
    """
    Replace the dimensions inferred to be shared by the average Gaussian.

    Returns:
        (merged1, merged2, shared_mask); the averaged Gaussian has mean
        (m1 + m2) / 2 and variance (v1 + v2) / 2
    """
    if p1.latent_dim < 2:
        raise ContractViolationError(f"aggregation needs d >= 2, got {p1.latent_dim}")
    shared = shared_dimensions(symmetrized_kl_per_dim(p1, p2))
    avg_mean = 0.5 * (p1.mean + p2.mean)
    avg_lv = np.logaddexp(p1.log_variance, p2.log_variance) - p1.log_variance.dtype.type(LN2)
    merged1 = GaussianPosterior(
        mean=np.where(shared, avg_mean, p1.mean),
        log_variance=np.where(shared, avg_lv, p1.log_variance),
    )
    merged2 = GaussianPosterior(
        mean=np.where(shared, avg_mean, p2.mean),
        log_variance=np.where(shared, avg_lv, p2.log_variance),
    )
    return merged1, merged2, shared


def adagvae_merge_backward(
    p1: GaussianPosterior,
    p2: GaussianPosterior,
    shared: np.ndarray,
    d_merged1: GaussianPosterior,
    d_merged2: GaussianPosterior,
) -> Tuple[GaussianPosterior, GaussianPosterior]:
    """Gradients w.r.t. the unmerged posteriors (the shared mask held fixed)."""
    mean_sum = d_merged1.mean + d_merged2.mean
    lv_sum = d_merged1.log_variance + d_merged2.log_variance
    # d/d lv1 of log((e^lv1 + e^lv2) / 2) is the softmax weight of lv1
    w1 = expit(p1.log_variance - p2.log_variance)
    w2 = 1.0 - w1
    d1 = GaussianPosterior(
        mean=np.where(shared, 0.5 * mean_sum, d_merged1.mean),
        log_variance=np.where(shared, w1 * lv_sum, d_merged1.log_variance),
    )
    d2 = GaussianPosterior(
        mean=np.where(shared, 0.5 * mean_sum, d_merged2.mean),
        log_variance=np.where(shared, w2 * lv_sum, d_merged2.log_variance),
    )
    return d1, d2


# ============================================================================
# SAMPLING
# ============================================================================

def reparameterize(post: GaussianPosterior, rng: np.random.Generator) -> np.ndarray:
    """z = mean + exp(0.5 * log_variance) * eps with eps ~ N(0, I) from rng."""
    eps = rng.standard_normal(post.mean.shape).astype(post.mean.dtype, copy=False)
    return reparameterize_with(post, eps)


def reparameterize_with(post: GaussianPosterior, eps: np.ndarray) -> np.ndarray:
    return post.mean + np.exp(0.5 * post.log_variance) * eps
