"""Posterior parameterizations, reparameterized coefficient draws and predictions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from penn.diffcore import NetworkTopology, NetworkWeights, ShapeError, forward, input_jacobian

if TYPE_CHECKING:
    from penn.trainer import TrainedModel


@dataclass
class PosteriorParams:
    """Per-observation Gaussian posterior over local coefficients (diagonal)."""

    mu_q: np.ndarray
    sigma_q: np.ndarray

    def __post_init__(self):
        self.mu_q = np.asarray(self.mu_q, dtype=np.float64)
        self.sigma_q = np.asarray(self.sigma_q, dtype=np.float64)
        if self.mu_q.shape != self.sigma_q.shape or self.mu_q.ndim != 2:
            raise ShapeError(f"mu_q {self.mu_q.shape} and sigma_q {self.sigma_q.shape} must be equal N x K")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mu_q.shape


@dataclass
class CoefficientSamples:
    beta: np.ndarray  # (N, M, K)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[1]


def infer_posterior(
    model: "TrainedModel | NetworkWeights",
    z: np.ndarray,
    topology: NetworkTopology | None = None,
    *,
    standardized: bool = True,
) -> PosteriorParams:
    """Posterior moments from a single forward pass.

    With a :class:`~penn.trainer.TrainedModel`, ``z`` is in raw units unless
    ``standardized`` is true, in which case it must already be scaled with
    the model's stored statistics. With bare weights a topology is required
    and ``z`` is passed through untouched.
    """
    if isinstance(model, NetworkWeights):
        if topology is None:
            raise ValueError("topology is required when passing bare weights")
        mu, sigma, _ = forward(model, topology, z)
        return PosteriorParams(mu, sigma)
    z_in = z if standardized else model.scaler.transform(z)
    mu, sigma, _ = forward(model.weights, model.topology, z_in)
    return PosteriorParams(mu, sigma)


def draw_noise(rng: np.random.Generator, n: int, n_draws: int, k: int) -> np.ndarray:
    return rng.standard_normal((n, n_draws, k))


def sample_coefficients(
    post: PosteriorParams, n_draws: int, rng: np.random.Generator | int | None = None
) -> CoefficientSamples:
    """beta[i, m] = mu_q[i] + sigma_q[i] * s[i, m] with s standard normal."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = np.random.default_rng(rng)
    n, k = post.shape
    s = draw_noise(rng, n, n_draws, k)
    return CoefficientSamples(post.mu_q[:, None, :] + post.sigma_q[:, None, :] * s)


def predict(x: np.ndarray, samples: CoefficientSamples) -> tuple[np.ndarray, np.ndarray]:
    """Draws from the predictive density, ``yhat[i, m] = x_i . beta[i, m]``.

    Returns:
        ``(yhat_draws, yhat_mean)`` of shapes (N, M) and (N,).
    """
    x = np.asarray(x, dtype=np.float64)
    beta = samples.beta
    if x.ndim != 2 or x.shape[0] != beta.shape[0] or x.shape[1] != beta.shape[2]:
        raise ShapeError(f"decoder inputs {x.shape} do not match coefficient draws {beta.shape}")
    draws = np.einsum("nk,nmk->nm", x, beta)
    return draws, draws.mean(axis=1)


def predict_mean(x: np.ndarray, post: PosteriorParams) -> np.ndarray:
    """Prediction at the posterior mean, ``x_i . mu_q[i]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != post.shape:
        raise ShapeError(f"decoder inputs {x.shape} do not match posterior {post.shape}")
    return np.einsum("nk,nk->n", x, post.mu_q)


def predict_posterior_bands(post: PosteriorParams, width_sd: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    if width_sd <= 0:
        raise ValueError("width_sd must be positive")
    half = width_sd * post.sigma_q
    return post.mu_q - half, post.mu_q + half


def mean_prediction_gradient(model: "TrainedModel", x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chain-rule decomposition of d f / d x for f(x) = x . mu_q(x).

    Only meaningful when the encoder reads the same variables as the decoder
    (no intercept column, no distinct encoder inputs). Returns the total
    gradient and the coefficient part, both (N, K); the difference is the
    encoder-sensitivity term ``(d mu_q / d x_k)' x``.
    """
    if model.distinct_encoder_inputs or model.intercept:
        raise ValueError("decomposition requires shared encoder and decoder inputs")
    x = np.asarray(x, dtype=np.float64)
    z = model.scaler.transform(x)
    mu, _, _ = forward(model.weights, model.topology, z)
    # chain through the standardization: dz_j/dx_j = 1/scale_j
    jac = input_jacobian(model.weights, model.topology, z) / model.scaler.scale[None, None, :]
    sensitivity = np.einsum("nj,njk->nk", x, jac)
    return mu + sensitivity, mu
