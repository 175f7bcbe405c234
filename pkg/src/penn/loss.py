"""Training objective: Monte Carlo squared error plus a weighted Gaussian KL penalty.

The objective minimized is::

    total = (1/M) sum_m sum_i (y_i - x_i . beta_i^m)^2
            + lam * sum_i sum_k KL( N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2) )

with the prior moments ``mu_p = pi @ mu_q`` and ``sigma_p = pi @ sigma_q``.
The KL enters with a positive sign, so it acts as a penalty: negating the
variational lower bound (expected log-likelihood minus the divergence)
gives exactly this form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from penn.diffcore import ShapeError
from penn.encoder import PosteriorParams
from penn.prior import KernelWeights


@dataclass(frozen=True)
class LossBreakdown:
    mc_mse: float
    kl_total: float
    total: float

    def as_dict(self) -> dict:
        return {"mc_mse": self.mc_mse, "kl_total": self.kl_total, "total": self.total}


def mc_gaussian_nll(y: np.ndarray, yhat_draws: np.ndarray) -> float:
    """``(1/M) sum_m sum_i (y_i - yhat_i^m)^2``."""
    y = np.asarray(y, dtype=np.float64)
    yhat_draws = np.asarray(yhat_draws, dtype=np.float64)
    if yhat_draws.ndim != 2 or yhat_draws.shape[0] != y.shape[0]:
        raise ShapeError(f"draws {yhat_draws.shape} do not match targets {y.shape}")
    if not np.all(np.isfinite(yhat_draws)):
        raise FloatingPointError("non-finite predictions")
    resid = y[:, None] - yhat_draws
    return float(np.sum(resid * resid) / yhat_draws.shape[1])


def kl_gaussian(mu_q, sigma_q, mu_p, sigma_p):
    """Elementwise KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)); broadcasts."""
    sigma_q = np.asarray(sigma_q, dtype=np.float64)
    sigma_p = np.asarray(sigma_p, dtype=np.float64)
    if np.any(sigma_q <= 0) or np.any(sigma_p <= 0):
        raise ValueError("standard deviations must be strictly positive")
    diff = np.asarray(mu_q, dtype=np.float64) - np.asarray(mu_p, dtype=np.float64)
    out = np.log(sigma_p / sigma_q) + (sigma_q**2 + diff**2) / (2.0 * sigma_p**2) - 0.5
    return out if out.ndim else float(out)


def kl_total(post: PosteriorParams, mu_p: np.ndarray, sigma_p: np.ndarray) -> float:
    if mu_p.shape != post.shape or sigma_p.shape != post.shape:
        raise ShapeError(f"prior moments {mu_p.shape}/{sigma_p.shape} vs posterior {post.shape}")
    return float(np.sum(kl_gaussian(post.mu_q, post.sigma_q, mu_p, sigma_p)))


def penn_loss(
    y: np.ndarray,
    yhat_draws: np.ndarray,
    post: PosteriorParams,
    mu_p: np.ndarray,
    sigma_p: np.ndarray,
    lam: float,
) -> LossBreakdown:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    mse = mc_gaussian_nll(y, yhat_draws)
    kl = kl_total(post, mu_p, sigma_p)
    return LossBreakdown(mse, kl, mse + lam * kl)


def penn_objective(
    x: np.ndarray,
    y: np.ndarray,
    post: PosteriorParams,
    noise: np.ndarray,
    pi: KernelWeights,
    lam: float,
    *,
    freeze_prior: bool = False,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Loss and its gradient with respect to the posterior moments.

    Args:
        x: decoder inputs (N, K).
        y: targets (N,).
        post: posterior moments from the encoder.
        noise: standard-normal draws (N, M, K) for the reparameterization.
        pi: kernel weights defining the prior.
        lam: weight of the KL penalty.
        freeze_prior: treat the prior moments as constants when
            differentiating (they still depend on the posterior in value).

    Returns:
        ``(breakdown, dL/dmu_q, dL/dsigma_q)``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    mu, sigma = post.mu_q, post.sigma_q
    n_draws = noise.shape[1]
    if noise.shape != (mu.shape[0], n_draws, mu.shape[1]) or x.shape != mu.shape:
        raise ShapeError(f"noise {noise.shape} / decoder inputs {x.shape} vs posterior {mu.shape}")

    yhat = (x * mu).sum(axis=1)[:, None] + np.einsum("nk,nmk->nm", x * sigma, noise)
    if not np.all(np.isfinite(yhat)):
        raise FloatingPointError("non-finite predictions")
    resid = y[:, None] - yhat
    mse = float(np.sum(resid * resid) / n_draws)

    d_mu = -2.0 * x * resid.mean(axis=1)[:, None]
    d_sigma = -2.0 / n_draws * x * np.einsum("nm,nmk->nk", resid, noise)

    mu_p, sigma_p = pi.apply(mu), pi.apply(sigma)
    kl = kl_total(post, mu_p, sigma_p)
    breakdown = LossBreakdown(mse, kl, mse + lam * kl)
    if lam == 0:
        return breakdown, d_mu, d_sigma

    diff = mu - mu_p
    var_p = sigma_p * sigma_p
    d_mu += lam * diff / var_p
    d_sigma += lam * (sigma / var_p - 1.0 / sigma)
    if not freeze_prior:
        d_mu_p = -diff / var_p
        d_sigma_p = 1.0 / sigma_p - (sigma * sigma + diff * diff) / (var_p * sigma_p)
        d_mu += lam * pi.apply_transpose(d_mu_p)
        d_sigma += lam * pi.apply_transpose(d_sigma_p)
    return breakdown, d_mu, d_sigma
