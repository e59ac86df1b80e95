"""
Beta-VAE Model
Version: 1.0

Encoder/decoder graphs bound to one ParamStore, with the inference-side
operations: encode, decode, reconstruct, latent traversals, prior
samples and the beta = 1 ELBO used for unsupervised model selection.
"""

import logging
from typing import Optional, Sequence, Union

import numpy as np

from schemas import ModelConfig
from services.errors import ContractViolationError
from services.tensor.params import ParamStore
from services.vae.architecture import build_decoder, build_encoder
from services.vae.objectives import GaussianPosterior, beta_elbo, reparameterize_with, sigmoid

logger = logging.getLogger(__name__)

DEFAULT_BATCH = 256


def as_float_images(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 images scaled to [0, 1]; float images passed through in the requested dtype."""
    if images.dtype == np.uint8:
        return images.astype(dtype) / np.asarray(255.0, dtype=dtype)
    return images.astype(dtype, copy=False)


class BetaVAE:
    """Gaussian encoder, Bernoulli decoder and their parameters."""

    def __init__(
        self,
        config: ModelConfig,
        params: Optional[ParamStore] = None,
        seed: Union[int, np.random.SeedSequence] = 0,
        dtype=np.float32,
    ):
        self.config = config
        self.encoder = build_encoder(config)
        self.decoder = build_decoder(config)
        if params is None:
            params = ParamStore(dtype=dtype)
            rng = np.random.default_rng(seed)
            self.encoder.init_params(params, rng)
            self.decoder.init_params(params, rng)
        else:
            expected = self.encoder.param_names() + self.decoder.param_names()
            if params.names() != expected:
                missing = sorted(set(expected) ^ set(params.names()))[:5]
                raise ContractViolationError(f"parameters do not match the architecture: {missing}")
            reference = ParamStore()
            rng = np.random.default_rng(0)
            self.encoder.init_params(reference, rng)
            self.decoder.init_params(reference, rng)
            for name in expected:
                if params.value(name).shape != reference.value(name).shape:
                    raise ContractViolationError(
                        f"parameter {name}: shape {params.value(name).shape} != {reference.value(name).shape}"
                    )
        self.params = params

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def dtype(self):
        return self.params.dtype

    def with_dtype(self, dtype) -> "BetaVAE":
        """Copy with parameters cast (float64 for gradient checks)."""
        return BetaVAE(self.config, params=self.params.copy(dtype=dtype))

    # === INFERENCE ===

    def encode(self, x: np.ndarray) -> GaussianPosterior:
        """Posterior of one (R, R, 3) image or an (N, R, R, 3) batch."""
        single = x.ndim == 3
        batch = as_float_images(x[None] if single else x, self.dtype)
        h = self.encoder.forward(batch, self.params)
        d = self.latent_dim
        post = GaussianPosterior(mean=h[:, :d].copy(), log_variance=h[:, d:].copy())
        if single:
            return GaussianPosterior(mean=post.mean[0], log_variance=post.log_variance[0])
        return post

    def decode_logits(self, z: np.ndarray) -> np.ndarray:
        single = z.ndim == 1
        batch = np.asarray(z, dtype=self.dtype)
        logits = self.decoder.forward(batch[None] if single else batch, self.params)
        return logits[0] if single else logits

    def decode(self, z: np.ndarray) -> np.ndarray:
        return sigmoid(self.decode_logits(z))

    def reconstruct(self, x: np.ndarray, batch_size: int = DEFAULT_BATCH) -> np.ndarray:
        """sigmoid(decoder(posterior mean)) for each input image."""
        if x.ndim == 3:
            return self.decode(self.encode(x).mean)
        parts = [self.decode(self.encode(x[i:i + batch_size]).mean) for i in range(0, len(x), batch_size)]
        return np.concatenate(parts) if parts else np.zeros((0,) + tuple(x.shape[1:]), dtype=self.dtype)

    def encode_means(self, images: np.ndarray, batch_size: int = DEFAULT_BATCH) -> np.ndarray:
        """(n, d) posterior means, batched."""
        parts = [self.encode(images[i:i + batch_size]).mean for i in range(0, len(images), batch_size)]
        if not parts:
            return np.zeros((0, self.latent_dim), dtype=self.dtype)
        return np.concatenate(parts)

    # === EXPORTS ===

    def latent_traversal(
        self,
        base_x: np.ndarray,
        dims: Optional[Sequence[int]] = None,
        values_per_dim: int = 7,
        span: float = 2.0,
    ) -> np.ndarray:
        """
        Sweep each requested latent dim of the base image's posterior mean.

        Args:
            base_x: One (R, R, 3) image
            dims: Latent dims to sweep (default: all)
            values_per_dim: Grid columns; odd counts put the mean in the center
            span: Half-width of the equispaced sweep around the mean

        Returns:
            (len(dims), values_per_dim, R, R, 3) images in [0, 1]
        """
        dims = list(range(self.latent_dim)) if dims is None else list(dims)
        for dim in dims:
            if not 0 <= dim < self.latent_dim:
                raise ContractViolationError(f"latent dim {dim} outside [0, {self.latent_dim})")
        mean = self.encode(base_x).mean
        offsets = np.linspace(-span, span, values_per_dim)
        rows = []
        for dim in dims:
            z = np.repeat(mean[None], values_per_dim, axis=0)
            z[:, dim] = mean[dim] + offsets
            rows.append(self.decode(z))
        return np.stack(rows)

    def sample_from_prior(self, n: int, rng: Union[int, np.random.Generator]) -> np.ndarray:
        """sigmoid(decoder(z)) for z ~ N(0, I)."""
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        z = rng.standard_normal((n, self.latent_dim)).astype(self.dtype)
        return self.decode(z)

    def evaluate_elbo(self, images: np.ndarray, seed: int = 0, batch_size: int = DEFAULT_BATCH):
        """Mean (elbo, recon, kl) per image at beta = 1 with a fixed eps stream."""
        rng = np.random.default_rng(seed)
        totals = np.zeros(3)
        n = len(images)
        if n == 0:
            raise ContractViolationError("evaluate_elbo needs at least one image")
        for start in range(0, n, batch_size):
            x = as_float_images(images[start:start + batch_size], self.dtype)
            post = self.encode(x)
            eps = rng.standard_normal(post.mean.shape).astype(self.dtype)
            logits = self.decode_logits(reparameterize_with(post, eps))
            terms = beta_elbo(x, logits, post, 1.0)
            totals += [np.sum(terms.elbo), np.sum(terms.recon), np.sum(terms.kl)]
        elbo, recon, kl = totals / n
        return float(elbo), float(recon), float(kl)
