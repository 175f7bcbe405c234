"""Parameter encoder neural network (PENN).

An inference network maps each observation's encoder inputs to a Gaussian
posterior over local linear-regression coefficients. The posteriors are
pulled toward kernel-weighted averages over neighboring observations, so
coefficients form stable regimes whose number is controlled by ``delta`` and
whose strength is controlled by ``lam``.
"""

from penn.capm import build_features, fit_conditional_capm, realtime_forecast, rolling_capm_baseline
from penn.encoder import PosteriorParams, infer_posterior, predict_mean, sample_coefficients
from penn.explain import contributions, lime_all, mae_phi, rolling_ols, sampled_shapley_all, static_ols
from penn.modelio import load_model, save_model
from penn.modelsel import HvBlockSpec, grid_search, hv_block_splits
from penn.prior import KernelSpec, build_kernel_weights
from penn.trainer import Dataset, OptimizerConfig, PennConfig, TrainedModel, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "HvBlockSpec",
    "KernelSpec",
    "OptimizerConfig",
    "PennConfig",
    "PosteriorParams",
    "TrainedModel",
    "build_features",
    "build_kernel_weights",
    "contributions",
    "fit_conditional_capm",
    "grid_search",
    "hv_block_splits",
    "infer_posterior",
    "lime_all",
    "load_model",
    "mae_phi",
    "predict_mean",
    "realtime_forecast",
    "rolling_capm_baseline",
    "rolling_ols",
    "sample_coefficients",
    "sampled_shapley_all",
    "save_model",
    "static_ols",
    "train",
]
