"""Feature contributions, their accuracy metric and baseline explainers.

Baselines: Monte Carlo permutation Shapley values, LIME with Gaussian local
sampling, and static / rolling least squares.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from penn.diffcore import ShapeError

PredictFn = Callable[[np.ndarray], np.ndarray]


class RankDeficientError(np.linalg.LinAlgError):
    """Design matrix is singular or numerically close to it."""


@dataclass
class ContributionMatrix:
    phi: np.ndarray
    baseline_mean: float

    @property
    def shape(self):
        return self.phi.shape


def contributions(beta: np.ndarray, x: np.ndarray) -> ContributionMatrix:
    """phi_ik = beta_ik x_ik - mean_i(beta_ik x_ik).

    ``baseline_mean`` is the sample mean of the local-linear prediction
    ``sum_k beta_ik x_ik``, so each row of ``phi`` sums to the prediction's
    deviation from it.
    """
    beta = np.asarray(beta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if beta.shape != x.shape or beta.ndim != 2:
        raise ShapeError(f"coefficients {beta.shape} and inputs {x.shape} must be equal N x K")
    terms = beta * x
    centre = terms.mean(axis=0)
    return ContributionMatrix(terms - centre, float(centre.sum()))


def mae_phi(phi_hat: np.ndarray, phi_true: np.ndarray) -> float:
    phi_hat = np.asarray(getattr(phi_hat, "phi", phi_hat), dtype=np.float64)
    phi_true = np.asarray(getattr(phi_true, "phi", phi_true), dtype=np.float64)
    if phi_hat.shape != phi_true.shape:
        raise ShapeError(f"contribution shapes differ: {phi_hat.shape} vs {phi_true.shape}")
    return float(np.mean(np.abs(phi_true - phi_hat)))


# --- Shapley ---------------------------------------------------------------


def shapley_draws(
    predict_fn: PredictFn,
    x: np.ndarray,
    rows: np.ndarray | list[int],
    n_draws: int,
    rng: np.random.Generator,
    background: np.ndarray | None = None,
) -> np.ndarray:
    """Per-draw marginal contributions, shape (len(rows), n_draws, K).

    For each draw a feature ordering and a background row are sampled. The
    background row's features are replaced by the explained row's, one at a
    time in that ordering; the change in prediction at each replacement is
    the marginal contribution of the feature just swapped in.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    bg = x if background is None else np.asarray(background, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    R, K = rows.size, x.shape[1]

    order = np.argsort(rng.random((R, n_draws, K)), axis=2)
    picks = rng.integers(0, bg.shape[0], size=(R, n_draws))

    # chain[r, d, s] = background with the first s features of the ordering swapped in
    chain = np.broadcast_to(bg[picks][:, :, None, :], (R, n_draws, K + 1, K)).copy()
    target = x[rows]
    for s in range(1, K + 1):
        feat = order[:, :, s - 1]
        # features at positions < s in the ordering come from the explained row
        swapped = np.zeros((R, n_draws, K), dtype=bool)
        np.put_along_axis(swapped, order[:, :, :s], True, axis=2)
        chain[:, :, s, :] = np.where(swapped, target[:, None, :], chain[:, :, 0, :])
    preds = np.asarray(predict_fn(chain.reshape(-1, K)), dtype=np.float64).reshape(R, n_draws, K + 1)
    gains = np.diff(preds, axis=2)  # gains[..., s] belongs to feature order[..., s]
    out = np.empty((R, n_draws, K))
    np.put_along_axis(out, order, gains, axis=2)
    return out


def sampled_shapley_all(
    predict_fn: PredictFn,
    x: np.ndarray,
    n_draws: int,
    rng: np.random.Generator,
    rows: np.ndarray | list[int] | None = None,
    batch: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Shapley estimates and Monte Carlo standard errors for many rows."""
    rows = np.arange(x.shape[0]) if rows is None else np.asarray(rows)
    phi = np.empty((rows.size, x.shape[1]))
    se = np.empty_like(phi)
    for start in range(0, rows.size, batch):
        sl = slice(start, start + batch)
        d = shapley_draws(predict_fn, x, rows[sl], n_draws, rng)
        phi[sl] = d.mean(axis=1)
        se[sl] = d.std(axis=1, ddof=1) / np.sqrt(n_draws) if n_draws > 1 else np.nan
    return phi, se


def sampled_shapley(
    predict_fn: PredictFn, x: np.ndarray, i: int, n_draws: int, rng: np.random.Generator
) -> np.ndarray:
    """Shapley contributions of row ``i`` with the sample itself as background."""
    return shapley_draws(predict_fn, x, [i], n_draws, rng)[0].mean(axis=0)


# --- LIME ------------------------------------------------------------------


@dataclass(frozen=True)
class LimeConfig:
    """Local Gaussian sampling scale, sample count and proximity width.

    ``width`` defaults to ``0.75 * sigma_z * sqrt(K)`` when left as None.
    """

    sigma_z: float = 0.1
    n_samples: int = 500
    width: float | None = None

    def __post_init__(self):
        if not self.sigma_z > 0 or self.n_samples < 1:
            raise ValueError("sigma_z and n_samples must be positive")
        if self.width is not None and not self.width > 0:
            raise ValueError("width must be positive")

    def kernel_width(self, k: int) -> float:
        return self.width if self.width is not None else 0.75 * self.sigma_z * np.sqrt(k)


def _weighted_lstsq(design: np.ndarray, target: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    a = design * sw[:, None]
    coef, _, rank, _ = np.linalg.lstsq(a, target * sw, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficientError(
            f"weighted design has rank {rank} < {design.shape[1]}; increase n_samples"
        )
    return coef


def lime_local(
    predict_fn: PredictFn,
    x_i: np.ndarray,
    cfg: LimeConfig = LimeConfig(),
    rng: np.random.Generator | None = None,
    features: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, float]:
    """Weighted linear surrogate of ``predict_fn`` around ``x_i``.

    Perturbations ``z ~ N(x_i, sigma_z^2 I)`` are weighted by a Gaussian
    proximity kernel ``exp(-|z - x_i|^2 / (2 width^2))``. ``features``
    optionally maps perturbations to the surrogate's regressors (for example
    to add an interaction column); by default the regressors are ``z``.

    Returns:
        ``(coefficients, intercept)``.
    """
    rng = np.random.default_rng(rng)
    x_i = np.asarray(x_i, dtype=np.float64).ravel()
    K = x_i.size
    design_fn = features or (lambda z: z)
    n_coef = design_fn(x_i[None, :]).shape[1]
    if cfg.n_samples <= n_coef + 1:
        raise ValueError(f"n_samples must exceed {n_coef + 1}")
    z = x_i + cfg.sigma_z * rng.standard_normal((cfg.n_samples, K))
    width = cfg.kernel_width(K)
    w = np.exp(-np.sum((z - x_i) ** 2, axis=1) / (2.0 * width**2))
    fz = np.asarray(predict_fn(z), dtype=np.float64)
    design = np.column_stack([np.ones(cfg.n_samples), design_fn(z)])
    coef = _weighted_lstsq(design, fz, w)
    return coef[1:], float(coef[0])


def lime_all(
    predict_fn: PredictFn,
    x: np.ndarray,
    cfg: LimeConfig,
    rng: np.random.Generator,
    features: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """LIME for every row, with one batched call to ``predict_fn``."""
    x = np.asarray(x, dtype=np.float64)
    N, K = x.shape
    design_fn = features or (lambda z: z)
    z = x[:, None, :] + cfg.sigma_z * rng.standard_normal((N, cfg.n_samples, K))
    fz = np.asarray(predict_fn(z.reshape(-1, K)), dtype=np.float64).reshape(N, cfg.n_samples)
    width = cfg.kernel_width(K)
    w = np.exp(-np.sum((z - x[:, None, :]) ** 2, axis=2) / (2.0 * width**2))
    n_coef = design_fn(x[:1]).shape[1]
    coefs = np.empty((N, n_coef))
    intercepts = np.empty(N)
    for i in range(N):
        design = np.column_stack([np.ones(cfg.n_samples), design_fn(z[i])])
        c = _weighted_lstsq(design, fz[i], w[i])
        intercepts[i], coefs[i] = c[0], c[1:]
    return coefs, intercepts


# --- least squares ---------------------------------------------------------


def static_ols(x: np.ndarray, y: np.ndarray, max_condition: float = 1e12) -> np.ndarray:
    """Least squares through an SVD-based solver; refuses ill-conditioned designs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < x.shape[1]:
        raise RankDeficientError(f"{x.shape[0]} observations for {x.shape[1]} regressors")
    s = np.linalg.svd(x, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > max_condition:
        raise RankDeficientError(f"design condition number {s[0] / max(s[-1], 1e-300):.3g}")
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return coef


def rolling_ols(x: np.ndarray, y: np.ndarray, window: int) -> np.ndarray:
    """Trailing-window OLS; row ``r`` uses observations ``r .. r + window - 1``.

    Windows with a rank-deficient design yield a row of NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64)
    n, k = x.shape
    if window < k + 1:
        raise ValueError(f"window must be >= {k + 1}")
    if window > n:
        raise ValueError(f"window {window} exceeds sample size {n}")
    out = np.full((n - window + 1, k), np.nan)
    for r in range(n - window + 1):
        try:
            out[r] = static_ols(x[r : r + window], y[r : r + window])
        except RankDeficientError:
            pass
    return out
