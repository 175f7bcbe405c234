"""Full-batch training of the inference network with Adam and gradient clipping."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from penn.diffcore import (
    GradientBundle,
    NetworkTopology,
    NetworkWeights,
    backward,
    forward,
    init_weights,
)
from penn.encoder import PosteriorParams, predict_mean
from penn.loss import LossBreakdown, penn_objective
from penn.prior import KernelSpec, KernelWeights, build_kernel_weights
from penn.seeding import stream

log = logging.getLogger(__name__)

SIMULATION_EPOCHS = 500
EMPIRICAL_EPOCHS = 200


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, component: str, breakdown: LossBreakdown | None = None):
        self.epoch = epoch
        self.component = component
        self.breakdown = breakdown
        super().__init__(f"non-finite {component} at epoch {epoch}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 1.0
    clip_value: float = 0.5
    epochs: int = SIMULATION_EPOCHS
    seed: int = 0
    # "mean": clip and step on the gradient of the objective divided by N
    reduction: str = "mean"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not (self.clip_norm > 0 and self.clip_value > 0):
            raise ValueError("clipping thresholds must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


@dataclass(frozen=True)
class PennConfig:
    """Model hyperparameters.

    ``lam`` weighs the KL penalty; ``kernel`` defines the prior's
    neighborhoods (for the disjoint kernel, ``kernel.delta`` is the
    normalized number of regimes). ``static`` lists decoder coefficients
    whose posterior is held constant across observations.
    """

    lam: float = 0.1
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec.disjoint(0.2))
    hidden_dims: tuple[int, ...] = (20, 20)
    activation: str = "sigmoid"
    n_draws: int = 100
    static: tuple[bool, ...] = ()
    freeze_prior: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "static", tuple(bool(s) for s in self.static))

    @property
    def delta(self) -> float:
        return self.kernel.delta

    def with_hyper(self, lam: float | None = None, delta: float | None = None) -> "PennConfig":
        kernel = self.kernel if delta is None else replace(self.kernel, variant="disjoint", delta=float(delta))
        return replace(self, lam=self.lam if lam is None else float(lam), kernel=kernel)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.to_dict()
        d["hidden_dims"] = list(self.hidden_dims)
        d["static"] = list(self.static)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PennConfig":
        d = dict(d)
        if "kernel" in d and isinstance(d["kernel"], dict):
            d["kernel"] = KernelSpec(**d["kernel"])
        d["hidden_dims"] = tuple(d.get("hidden_dims", (20, 20)))
        d["static"] = tuple(d.get("static", ()))
        return cls(**d)


@dataclass
class Standardizer:
    """Column centering and scaling; zero-variance columns map to zero."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, z: np.ndarray) -> "Standardizer":
        z = np.asarray(z, dtype=np.float64)
        mean = z.mean(axis=0)
        std = z.std(axis=0)
        flat = std == 0
        if np.any(flat):
            warnings.warn(
                f"zero-variance encoder columns {np.flatnonzero(flat).tolist()} standardized to 0",
                RuntimeWarning,
                stacklevel=2,
            )
        return cls(mean, np.where(flat, 1.0, std))

    def transform(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z, dtype=np.float64) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


@dataclass
class Dataset:
    """Decoder inputs ``x`` (N x K), targets ``y`` and optional encoder inputs ``z``.

    When ``z`` is None the encoder reads ``x`` itself, minus any intercept
    column added through :meth:`from_arrays`.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None
    intercept: bool = False
    feature_names: tuple[str, ...] = ()
    encoder_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.x.ndim != 2:
            raise ValueError("x must be a 2-d array")
        if self.x.shape[0] == 0:
            raise ValueError("empty dataset")
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError(f"x has {self.x.shape[0]} rows, y has {self.y.shape[0]}")
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=np.float64)
            if self.z.ndim == 1:
                self.z = self.z[:, None]
            if self.z.shape[0] != self.x.shape[0]:
                raise ValueError(f"z has {self.z.shape[0]} rows, x has {self.x.shape[0]}")
        if not self.feature_names:
            names = [f"x{k + 1}" for k in range(self.x.shape[1] - self.intercept)]
            self.feature_names = tuple((["const"] if self.intercept else []) + names)

    @classmethod
    def from_arrays(cls, x, y, z=None, *, add_intercept: bool = False, **kw) -> "Dataset":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if add_intercept:
            if z is None:
                z = x
            x = np.column_stack([np.ones(x.shape[0]), x])
        return cls(x, y, z, intercept=add_intercept, **kw)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def encoder_inputs(self) -> np.ndarray:
        return self.x if self.z is None else self.z

    @property
    def distinct_encoder_inputs(self) -> bool:
        return self.z is not None and not self.intercept

    def subset(self, idx: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.x[idx],
            self.y[idx],
            None if self.z is None else self.z[idx],
            intercept=self.intercept,
            feature_names=self.feature_names,
            encoder_names=self.encoder_names,
        )


@dataclass
class TrainedModel:
    weights: NetworkWeights
    topology: NetworkTopology
    penn_config: PennConfig
    opt_config: OptimizerConfig
    scaler: Standardizer
    loss_trace: list[LossBreakdown]
    intercept: bool = False
    distinct_encoder_inputs: bool = False
    feature_names: tuple[str, ...] = ()

    def posterior(self, z: np.ndarray) -> PosteriorParams:
        """Posterior for raw (unstandardized) encoder inputs."""
        mu, sigma, _ = forward(self.weights, self.topology, self.scaler.transform(z))
        return PosteriorParams(mu, sigma)

    def encoder_inputs_for(self, data: Dataset) -> np.ndarray:
        return data.encoder_inputs

    def posterior_for(self, data: Dataset) -> PosteriorParams:
        return self.posterior(data.encoder_inputs)

    def predict_mean(self, data: Dataset) -> np.ndarray:
        return predict_mean(data.x, self.posterior_for(data))

    @property
    def final_loss(self) -> LossBreakdown:
        return self.loss_trace[-1]


def clip_gradients(g: GradientBundle, clip_value: float = 0.5, clip_norm: float = 1.0) -> GradientBundle:
    """Clamp each entry to +-clip_value, then rescale to global norm <= clip_norm."""
    if clip_value <= 0 or clip_norm <= 0:
        raise ValueError("clipping thresholds must be positive")
    clipped = g.map(lambda a: np.clip(a, -clip_value, clip_value))
    norm = clipped.global_norm()
    if norm > clip_norm:
        scale = clip_norm / norm
        clipped = clipped.map(lambda a: a * scale)
    return clipped


@dataclass
class AdamState:
    m: NetworkWeights
    v: NetworkWeights
    t: int = 0

    @classmethod
    def zeros(cls, weights: NetworkWeights) -> "AdamState":
        return cls(weights.zeros_like(), weights.zeros_like(), 0)


def adam_step(
    weights: NetworkWeights,
    g: NetworkWeights,
    state: AdamState,
    cfg: OptimizerConfig,
    static_mask: Sequence[bool] | np.ndarray | None = None,
) -> tuple[NetworkWeights, AdamState]:
    b1, b2 = cfg.beta1, cfg.beta2
    t = state.t + 1
    m = state.m.zip_map(g, lambda m_, g_: b1 * m_ + (1.0 - b1) * g_)
    v = state.v.zip_map(g, lambda v_, g_: b2 * v_ + (1.0 - b2) * g_ * g_)
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    step = m.zip_map(v, lambda m_, v_: cfg.learning_rate * (m_ / c1) / (np.sqrt(v_ / c2) + cfg.epsilon))
    new = weights.zip_map(step, lambda w_, s_: w_ - s_)
    if static_mask is not None:
        mask = np.asarray(static_mask, dtype=bool)
        new.mean_W[mask] = 0.0
        new.var_W[mask] = 0.0
    return new, AdamState(m, v, t)


ProgressHook = Callable[[int, LossBreakdown], None]


def train(
    data: Dataset,
    penn_cfg: PennConfig | None = None,
    opt_cfg: OptimizerConfig | None = None,
    *,
    progress: ProgressHook | None = None,
    pi: KernelWeights | None = None,
) -> TrainedModel:
    """Fit the inference network on the full sample.

    Each epoch draws fresh standard-normal noise, evaluates the objective,
    backpropagates, clips and takes one Adam step. The loss recorded for an
    epoch is evaluated before that epoch's update. With the default
    ``reduction="mean"`` the clipping thresholds apply to the gradient of the
    objective divided by N; the summed objective would saturate them on
    every step.
    """
    penn_cfg = penn_cfg or PennConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    if data.n == 0:
        raise ValueError("empty dataset")

    scaler = Standardizer.fit(data.encoder_inputs)
    z = scaler.transform(data.encoder_inputs)
    K = data.x.shape[1]
    topology = NetworkTopology(
        input_dim=z.shape[1],
        hidden_dims=penn_cfg.hidden_dims,
        output_dim=K,
        static_mask=penn_cfg.static or (False,) * K,
        activation=penn_cfg.activation,
    )
    if pi is None:
        pi = build_kernel_weights(z, penn_cfg.kernel)

    weights = init_weights(topology, stream(opt_cfg.seed, "init"))
    noise_rng = stream(opt_cfg.seed, "noise")
    state = AdamState.zeros(weights)
    mask = topology.mask_array
    trace: list[LossBreakdown] = []

    for epoch in range(opt_cfg.epochs):
        noise = noise_rng.standard_normal((data.n, penn_cfg.n_draws, K))
        mu, sigma, tape = forward(weights, topology, z)
        try:
            breakdown, d_mu, d_sigma = penn_objective(
                data.x, data.y, PosteriorParams(mu, sigma), noise, pi, penn_cfg.lam,
                freeze_prior=penn_cfg.freeze_prior,
            )
        except FloatingPointError as exc:
            raise TrainingError(epoch, "predictions") from exc
        except ValueError as exc:  # sigma underflow to zero
            raise TrainingError(epoch, "posterior scale") from exc
        for component in ("mc_mse", "kl_total", "total"):
            if not np.isfinite(getattr(breakdown, component)):
                raise TrainingError(epoch, component, breakdown)
        trace.append(breakdown)
        if progress is not None:
            progress(epoch, breakdown)

        if opt_cfg.reduction == "mean":
            d_mu, d_sigma = d_mu / data.n, d_sigma / data.n
        grads = clip_gradients(backward(tape, d_mu, d_sigma), opt_cfg.clip_value, opt_cfg.clip_norm)
        weights, state = adam_step(weights, grads, state, opt_cfg, mask)

    log.debug("trained %d epochs, final loss %.6g", opt_cfg.epochs, trace[-1].total)
    return TrainedModel(
        weights=weights,
        topology=topology,
        penn_config=penn_cfg,
        opt_config=opt_cfg,
        scaler=scaler,
        loss_trace=trace,
        intercept=data.intercept,
        distinct_encoder_inputs=data.distinct_encoder_inputs,
        feature_names=data.feature_names,
    )
