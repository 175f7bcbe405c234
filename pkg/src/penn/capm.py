"""Conditional CAPM with regime-dependent alpha and beta.

Decoder: excess sector return on ``[1, excess market return]``. Encoder:
lagged year-on-year changes of macro state variables. Also provides the
rolling-OLS baseline, expanding-window real-time forecasts and a synthetic
fixture with a known two-regime beta.

CSV schemas
-----------
``returns.csv``: ``date, r_f, r_m, <sector>...`` (returns in percent per period)
``macro.csv``:   ``date, <series>...``
Dates are ISO-8601.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from penn.encoder import predict_posterior_bands
from penn.explain import rolling_ols
from penn.seeding import child_seed, stream
from penn.trainer import (
    EMPIRICAL_EPOCHS,
    Dataset,
    OptimizerConfig,
    PennConfig,
    TrainedModel,
    train,
)

log = logging.getLogger(__name__)

MACRO_SERIES = (
    "short_rate",
    "term_premium",
    "default_premium",
    "dividend_yield",
    "real_yield",
    "breakeven_inflation",
)


class CapmDataError(ValueError):
    """Input panels are misaligned or too short."""


def _clean(frame: pd.DataFrame, what: str) -> pd.DataFrame:
    frame = frame.sort_index()
    if frame.index.has_duplicates:
        raise CapmDataError(f"{what}: duplicate dates")
    n_before = len(frame)
    frame = frame.dropna(how="any")
    if len(frame) < n_before:
        log.info("%s: dropped %d rows with missing fields", what, n_before - len(frame))
    return frame.astype(np.float64)


@dataclass
class ReturnsPanel:
    """Date-indexed frame with ``r_f``, ``r_m`` and one column per sector."""

    frame: pd.DataFrame

    def __post_init__(self):
        missing = {"r_f", "r_m"} - set(self.frame.columns)
        if missing:
            raise CapmDataError(f"returns panel lacks columns {sorted(missing)}")
        self.frame = _clean(self.frame, "returns")
        if not self.sectors:
            raise CapmDataError("returns panel has no sector columns")

    @property
    def sectors(self) -> list[str]:
        return [c for c in self.frame.columns if c not in ("r_f", "r_m")]

    @classmethod
    def read_csv(cls, path: str | Path) -> "ReturnsPanel":
        return cls(pd.read_csv(path, parse_dates=["date"], index_col="date"))

    def to_csv(self, path: str | Path) -> None:
        self.frame.to_csv(path, index_label="date", date_format="%Y-%m-%d")


@dataclass
class MacroPanel:
    frame: pd.DataFrame

    def __post_init__(self):
        if self.frame.shape[1] == 0:
            raise CapmDataError("macro panel has no series")
        self.frame = _clean(self.frame, "macro")

    @classmethod
    def read_csv(cls, path: str | Path) -> "MacroPanel":
        return cls(pd.read_csv(path, parse_dates=["date"], index_col="date"))

    def to_csv(self, path: str | Path) -> None:
        self.frame.to_csv(path, index_label="date", date_format="%Y-%m-%d")


def excess_return(r, r_f):
    return np.asarray(r, dtype=np.float64) - np.asarray(r_f, dtype=np.float64)


@dataclass
class CapmFeatures:
    """Aligned model inputs for one sector.

    Row ``t`` pairs the target ``y[t]`` and decoder row ``[1, excess market
    return at t]`` with the macro changes dated ``t - 1`` (``z_raw``) and
    their full-sample standardization (``z``).
    """

    dates: pd.DatetimeIndex
    z: np.ndarray
    z_raw: np.ndarray
    x: np.ndarray
    y: np.ndarray
    sector: str
    macro_names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def dataset(self, raw: bool = False, rows: slice | np.ndarray | None = None) -> Dataset:
        rows = slice(None) if rows is None else rows
        return Dataset(
            self.x[rows], self.y[rows], (self.z_raw if raw else self.z)[rows],
            feature_names=("alpha", "beta"), encoder_names=self.macro_names,
        )


def standardize_columns(z: np.ndarray) -> np.ndarray:
    """Column z-scores; zero-variance columns become zeros with a warning."""
    mean = z.mean(axis=0)
    std = z.std(axis=0)
    flat = std == 0
    if np.any(flat):
        warnings.warn(
            f"zero-variance macro columns {np.flatnonzero(flat).tolist()} mapped to zeros",
            RuntimeWarning,
            stacklevel=2,
        )
    return np.where(flat, 0.0, (z - mean) / np.where(flat, 1.0, std))


def build_features(returns: ReturnsPanel, macro: MacroPanel, yoy_window: int, sector: str | None = None) -> CapmFeatures:
    """Excess returns, lagged year-on-year macro changes and their z-scores.

    ``yoy_window`` counts observations (12 for monthly data, ~252 for daily).
    """
    if yoy_window < 1:
        raise CapmDataError("yoy_window must be >= 1")
    sector = sector or returns.sectors[0]
    if sector not in returns.sectors:
        raise CapmDataError(f"unknown sector {sector!r}; available: {returns.sectors}")
    joined = returns.frame[["r_f", "r_m", sector]].join(macro.frame, how="inner")
    if len(joined) < len(returns.frame) or len(joined) < len(macro.frame):
        log.info("aligned panels on %d common dates", len(joined))
    if len(joined) < yoy_window + 3:
        raise CapmDataError(
            f"{len(joined)} common dates are too few for a {yoy_window}-observation change plus one lag"
        )
    m = joined[list(macro.frame.columns)].to_numpy()
    change = np.full_like(m, np.nan)
    change[yoy_window:] = m[yoy_window:] - m[:-yoy_window]
    lagged = np.full_like(m, np.nan)
    lagged[1:] = change[:-1]
    first = yoy_window + 1
    z_raw = lagged[first:]
    r = joined.iloc[first:]
    y = excess_return(r[sector], r["r_f"])
    x = np.column_stack([np.ones(len(r)), excess_return(r["r_m"], r["r_f"])])
    return CapmFeatures(
        dates=pd.DatetimeIndex(r.index),
        z=standardize_columns(z_raw),
        z_raw=z_raw,
        x=x,
        y=y,
        sector=sector,
        macro_names=tuple(macro.frame.columns),
    )


def default_capm_optimizer(seed: int = 0) -> OptimizerConfig:
    return OptimizerConfig(epochs=EMPIRICAL_EPOCHS, seed=seed)


@dataclass
class CapmFit:
    dates: pd.DatetimeIndex
    alpha_mean: np.ndarray
    alpha_sd: np.ndarray
    beta_mean: np.ndarray
    beta_sd: np.ndarray
    sector: str
    model: TrainedModel

    def bands(self, width_sd: float = 2.0) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        from penn.encoder import PosteriorParams

        post = PosteriorParams(
            np.column_stack([self.alpha_mean, self.beta_mean]),
            np.column_stack([self.alpha_sd, self.beta_sd]),
        )
        lo, hi = predict_posterior_bands(post, width_sd)
        return {"alpha": (lo[:, 0], hi[:, 0]), "beta": (lo[:, 1], hi[:, 1])}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "date": self.dates.strftime("%Y-%m-%d"),
                "alpha_mean": self.alpha_mean,
                "alpha_sd": self.alpha_sd,
                "beta_mean": self.beta_mean,
                "beta_sd": self.beta_sd,
            }
        )


def fit_conditional_capm(
    features: CapmFeatures, penn_cfg: PennConfig | None = None, opt_cfg: OptimizerConfig | None = None
) -> CapmFit:
    """In-sample alpha/beta posteriors for every date."""
    penn_cfg = penn_cfg or PennConfig()
    opt_cfg = opt_cfg or default_capm_optimizer()
    data = features.dataset()
    model = train(data, penn_cfg, opt_cfg)
    post = model.posterior(data.z)
    return CapmFit(
        dates=features.dates,
        alpha_mean=post.mu_q[:, 0],
        alpha_sd=post.sigma_q[:, 0],
        beta_mean=post.mu_q[:, 1],
        beta_sd=post.sigma_q[:, 1],
        sector=features.sector,
        model=model,
    )


def realtime_forecast(
    features: CapmFeatures,
    penn_cfg: PennConfig | None = None,
    opt_cfg: OptimizerConfig | None = None,
    start_index: int | None = None,
    retrain_every: int = 1,
    train_fn: Callable[[Dataset, PennConfig, OptimizerConfig], TrainedModel] = train,
) -> pd.DataFrame:
    """Expanding-window out-of-sample forecasts of alpha and beta.

    The forecast for row ``j`` comes from a network trained on rows
    ``< j0`` (``j0 <= j`` the most recent retraining point) and evaluated at
    the macro changes dated ``j - 1``. Encoder inputs are standardized with
    statistics of the training rows only, so nothing dated after ``j - 1``
    reaches a forecast. Each retraining gets its own seed derived from
    ``opt_cfg.seed`` and the row index; ``train_fn`` replaces the fitting
    routine.
    """
    penn_cfg = penn_cfg or PennConfig()
    opt_cfg = opt_cfg or default_capm_optimizer()
    if retrain_every < 1:
        raise ValueError("retrain_every must be >= 1")
    start_index = features.n // 2 if start_index is None else start_index
    min_history = max(10, len(features.x[0]) + 2)
    if not min_history <= start_index < features.n:
        raise CapmDataError(f"start_index must lie in [{min_history}, {features.n})")

    rows = []
    model = None
    trained_through = -1
    for j in range(start_index, features.n):
        if model is None or (j - start_index) % retrain_every == 0:
            opt = replace(opt_cfg, seed=child_seed(opt_cfg.seed, "realtime", j))
            model = train_fn(features.dataset(raw=True, rows=slice(0, j)), penn_cfg, opt)
            trained_through = j - 1
        post = model.posterior(features.z_raw[j : j + 1])
        rows.append(
            {
                "date": features.dates[j].strftime("%Y-%m-%d"),
                "alpha_hat": post.mu_q[0, 0],
                "alpha_sd": post.sigma_q[0, 0],
                "beta_hat": post.mu_q[0, 1],
                "beta_sd": post.sigma_q[0, 1],
                "trained_through": features.dates[trained_through].strftime("%Y-%m-%d"),
            }
        )
    return pd.DataFrame(rows)


def rolling_capm_baseline(features: CapmFeatures, window: int) -> pd.DataFrame:
    """Trailing-window OLS of excess sector on excess market return, by window end date."""
    if window < 3:
        raise ValueError("window must be >= 3")
    coef = rolling_ols(features.x, features.y, window)
    return pd.DataFrame(
        {
            "date": features.dates[window - 1 :].strftime("%Y-%m-%d"),
            "alpha": coef[:, 0],
            "beta": coef[:, 1],
        }
    )


@dataclass
class SyntheticCapm:
    returns: ReturnsPanel
    macro: MacroPanel
    truth: pd.DataFrame  # date-indexed, columns "<sector>_alpha", "<sector>_beta"
    yoy_window: int


def synthetic_capm_data(
    n_periods: int = 1200,
    seed: int = 0,
    yoy_window: int = 52,
    sectors: tuple[str, ...] = ("S1",),
    beta_levels: tuple[float, float] = (0.5, 1.5),
    cycle: int = 260,
    idio_sd: float = 0.5,
    constant_macro: bool = False,
) -> SyntheticCapm:
    """Weekly panel whose beta switches with the state of the first macro series.

    ``beta = beta_levels[0]`` when the year-on-year change of the first macro
    series, observed one period earlier, is positive, otherwise
    ``beta_levels[1]``; alpha is zero. The first series follows a noisy
    cycle of ``cycle`` periods so regimes persist; the remaining series are
    random walks.
    """
    rng = stream(seed, "capm-fixture")
    dates = pd.date_range("1995-01-06", periods=n_periods, freq="W-FRI")
    t = np.arange(n_periods)
    macro = np.cumsum(0.1 * rng.standard_normal((n_periods, len(MACRO_SERIES))), axis=0)
    macro[:, 0] = 2.0 * np.sin(2 * np.pi * t / cycle) + 0.05 * rng.standard_normal(n_periods)
    if constant_macro:
        macro[:] = 1.0
    macro_frame = pd.DataFrame(macro, index=dates, columns=list(MACRO_SERIES))

    change = np.full(n_periods, np.nan)
    change[yoy_window:] = macro[yoy_window:, 0] - macro[:-yoy_window, 0]
    state = np.full(n_periods, np.nan)
    state[1:] = change[:-1]
    beta = np.where(state > 0, beta_levels[0], beta_levels[1])
    beta[np.isnan(state)] = beta_levels[1]

    r_f = 0.05 + 0.005 * rng.standard_normal(n_periods)
    mkt_excess = 0.1 + 2.0 * rng.standard_normal(n_periods)
    cols = {"r_f": r_f, "r_m": r_f + mkt_excess}
    truth = {}
    for s in sectors:
        cols[s] = r_f + beta * mkt_excess + idio_sd * rng.standard_normal(n_periods)
        truth[f"{s}_alpha"] = np.zeros(n_periods)
        truth[f"{s}_beta"] = beta
    returns = ReturnsPanel(pd.DataFrame(cols, index=dates))
    return SyntheticCapm(returns, MacroPanel(macro_frame), pd.DataFrame(truth, index=dates), yoy_window)
