"""Fixed-topology inference network with hand-written reverse-mode gradients.

The network maps encoder inputs ``z`` (N x J) through a stack of dense
hidden layers to two heads of width K: an affine mean head and an
exponential scale head. Weight matrices are stored as ``(out, in)`` so a
layer computes ``h @ W.T + b``.

Heads can be partially static: for every coefficient flagged in
``static_mask`` the corresponding head rows carry no weights, only a bias,
so that coefficient's posterior does not depend on the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

ACTIVATIONS = ("sigmoid", "tanh")


class ShapeError(ValueError):
    """Raised when an array does not conform to the network topology."""


@dataclass(frozen=True)
class NetworkTopology:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    static_mask: tuple[bool, ...] = ()
    activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        mask = tuple(bool(m) for m in self.static_mask) or (False,) * self.output_dim
        object.__setattr__(self, "static_mask", mask)
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.output_dim < 1:
            raise ValueError("output_dim must be >= 1")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be a nonempty list of positive sizes")
        if len(self.static_mask) != self.output_dim:
            raise ValueError(
                f"static_mask has length {len(self.static_mask)}, expected {self.output_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def mask_array(self) -> np.ndarray:
        return np.asarray(self.static_mask, dtype=bool)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "static_mask": list(self.static_mask),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkTopology":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            output_dim=int(d["output_dim"]),
            static_mask=tuple(d.get("static_mask", ())),
            activation=d.get("activation", "sigmoid"),
        )


@dataclass
class NetworkWeights:
    """Trainable parameters. Layer ``l`` has ``hidden_W[l]`` of shape (out, in)."""

    hidden_W: list[np.ndarray]
    hidden_b: list[np.ndarray]
    mean_W: np.ndarray
    mean_b: np.ndarray
    var_W: np.ndarray
    var_b: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [*self.hidden_W, *self.hidden_b, self.mean_W, self.mean_b, self.var_W, self.var_b]

    def names(self) -> list[str]:
        n = len(self.hidden_W)
        return (
            [f"hidden_W[{i}]" for i in range(n)]
            + [f"hidden_b[{i}]" for i in range(n)]
            + ["mean_W", "mean_b", "var_W", "var_b"]
        )

    def _rebuild(self, arrays: Sequence[np.ndarray]):
        n = len(self.hidden_W)
        arrays = list(arrays)
        return type(self)(
            hidden_W=arrays[:n],
            hidden_b=arrays[n : 2 * n],
            mean_W=arrays[2 * n],
            mean_b=arrays[2 * n + 1],
            var_W=arrays[2 * n + 2],
            var_b=arrays[2 * n + 3],
        )

    def map(self, fn: Callable[[np.ndarray], np.ndarray]):
        return self._rebuild([fn(a) for a in self.arrays()])

    def zip_map(self, other: "NetworkWeights", fn: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        return self._rebuild([fn(a, b) for a, b in zip(self.arrays(), other.arrays())])

    def copy(self):
        return self.map(np.copy)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def to_dict(self) -> dict:
        return {name: a.tolist() for name, a in zip(self.names(), self.arrays())}

    @classmethod
    def from_dict(cls, d: dict, topology: NetworkTopology) -> "NetworkWeights":
        n = len(topology.hidden_dims)
        get = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
        w = cls(
            hidden_W=[get(f"hidden_W[{i}]") for i in range(n)],
            hidden_b=[get(f"hidden_b[{i}]") for i in range(n)],
            mean_W=get("mean_W"),
            mean_b=get("mean_b"),
            var_W=get("var_W"),
            var_b=get("var_b"),
        )
        check_weights(w, topology)
        return w


@dataclass
class GradientBundle(NetworkWeights):
    """d(loss)/d(weight), shape-congruent with :class:`NetworkWeights`.

    ``dz`` holds the gradient with respect to the network input when it was
    requested from :func:`backward`; it is not part of the parameter set.
    """

    dz: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Tape:
    """Activation record of one forward pass."""

    topology: NetworkTopology
    weights: NetworkWeights
    activations: list[np.ndarray]  # [z, h_1, ..., h_L]
    mu_q: np.ndarray
    sigma_q: np.ndarray


def init_weights(topology: NetworkTopology, rng: np.random.Generator) -> NetworkWeights:
    """Glorot-uniform weights, zero biases, zeroed head rows for static coefficients."""
    dims = [topology.input_dim, *topology.hidden_dims]

    def glorot(fan_out: int, fan_in: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    hidden_W = [glorot(dims[i + 1], dims[i]) for i in range(len(topology.hidden_dims))]
    hidden_b = [np.zeros(h) for h in topology.hidden_dims]
    K, H = topology.output_dim, dims[-1]
    mean_W = glorot(K, H)
    var_W = glorot(K, H)
    mask = topology.mask_array
    mean_W[mask] = 0.0
    var_W[mask] = 0.0
    return NetworkWeights(hidden_W, hidden_b, mean_W, np.zeros(K), var_W, np.zeros(K))


def check_weights(weights: NetworkWeights, topology: NetworkTopology) -> None:
    dims = [topology.input_dim, *topology.hidden_dims]
    if len(weights.hidden_W) != len(topology.hidden_dims):
        raise ShapeError(
            f"expected {len(topology.hidden_dims)} hidden layers, got {len(weights.hidden_W)}"
        )
    for i, (W, b) in enumerate(zip(weights.hidden_W, weights.hidden_b)):
        if W.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
            raise ShapeError(
                f"hidden layer {i}: weight {W.shape} / bias {b.shape}, "
                f"expected {(dims[i + 1], dims[i])} / {(dims[i + 1],)}"
            )
    K, H = topology.output_dim, dims[-1]
    for name, W, b in (
        ("mean head", weights.mean_W, weights.mean_b),
        ("variance head", weights.var_W, weights.var_b),
    ):
        if W.shape != (K, H) or b.shape != (K,):
            raise ShapeError(f"{name}: weight {W.shape} / bias {b.shape}, expected {(K, H)} / {(K,)}")


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        # split form avoids overflow in exp for large |a|
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        e = np.exp(a[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    return np.tanh(a)


def _activation_slope(h: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed through the activation output
    if kind == "sigmoid":
        return h * (1.0 - h)
    return 1.0 - h * h


def forward(
    weights: NetworkWeights, topology: NetworkTopology, z_batch: np.ndarray
) -> tuple[np.ndarray, np.ndarray, Tape]:
    """Evaluate the network on ``z_batch``.

    Returns:
        ``(mu_q, sigma_q, tape)`` with ``mu_q`` and ``sigma_q`` of shape (N, K)
        and ``sigma_q > 0`` everywhere.
    """
    z = np.asarray(z_batch, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != topology.input_dim:
        raise ShapeError(
            f"input layer: expected (N, {topology.input_dim}) encoder inputs, got {z.shape}"
        )
    if not np.all(np.isfinite(z)):
        raise ValueError("encoder input contains non-finite values")
    check_weights(weights, topology)

    acts = [z]
    h = z
    for W, b in zip(weights.hidden_W, weights.hidden_b):
        h = _activate(h @ W.T + b, topology.activation)
        acts.append(h)
    mu = h @ weights.mean_W.T + weights.mean_b
    sigma = np.exp(h @ weights.var_W.T + weights.var_b)
    return mu, sigma, Tape(topology, weights, acts, mu, sigma)


def backward(
    tape: Tape, dmu: np.ndarray, dsigma: np.ndarray, *, input_grad: bool = False
) -> GradientBundle:
    """Backpropagate upstream gradients of (mu_q, sigma_q) to the weights.

    Args:
        tape: record from the matching :func:`forward` call.
        dmu: dL/dmu_q, shape (N, K).
        dsigma: dL/dsigma_q, shape (N, K).
        input_grad: also return dL/dz in ``GradientBundle.dz``.
    """
    dmu = np.asarray(dmu, dtype=np.float64)
    dsigma = np.asarray(dsigma, dtype=np.float64)
    if dmu.shape != tape.mu_q.shape or dsigma.shape != tape.sigma_q.shape:
        raise ShapeError(
            f"upstream gradients {dmu.shape}/{dsigma.shape} do not match "
            f"forward outputs {tape.mu_q.shape}"
        )
    w = tape.weights
    mask = tape.topology.mask_array
    h = tape.activations[-1]

    da_var = dsigma * tape.sigma_q  # d exp(a) / da = exp(a)
    d_mean_W = dmu.T @ h
    d_var_W = da_var.T @ h
    d_mean_W[mask] = 0.0
    d_var_W[mask] = 0.0
    dh = dmu @ w.mean_W + da_var @ w.var_W

    n = len(w.hidden_W)
    dW: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    db: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for layer in range(n - 1, -1, -1):
        out = tape.activations[layer + 1]
        dpre = dh * _activation_slope(out, tape.topology.activation)
        dW[layer] = dpre.T @ tape.activations[layer]
        db[layer] = dpre.sum(axis=0)
        dh = dpre @ w.hidden_W[layer]

    return GradientBundle(
        hidden_W=dW,
        hidden_b=db,
        mean_W=d_mean_W,
        mean_b=dmu.sum(axis=0),
        var_W=d_var_W,
        var_b=da_var.sum(axis=0),
        dz=dh if input_grad else None,
    )


def input_jacobian(weights: NetworkWeights, topology: NetworkTopology, z: np.ndarray) -> np.ndarray:
    """d mu_q / d z for every row, shape (N, K, J)."""
    mu, sigma, tape = forward(weights, topology, z)
    K = topology.output_dim
    jac = np.empty((z.shape[0], K, topology.input_dim))
    zeros = np.zeros_like(sigma)
    for k in range(K):
        onehot = np.zeros_like(mu)
        onehot[:, k] = 1.0
        jac[:, k, :] = backward(tape, onehot, zeros, input_grad=True).dz
    return jac


def trainable_entries(weights: NetworkWeights, topology: NetworkTopology) -> Iterator[tuple[int, tuple]]:
    """Yield ``(array_index, element_index)`` for every trainable scalar."""
    mask = topology.mask_array
    arrays = weights.arrays()
    head_W = {len(arrays) - 4, len(arrays) - 2}
    for a_idx, a in enumerate(arrays):
        for idx in np.ndindex(a.shape):
            if a_idx in head_W and mask[idx[0]]:
                continue
            yield a_idx, idx


def finite_difference_check(
    loss_fn: Callable[[NetworkWeights], tuple[float, NetworkWeights]],
    weights: NetworkWeights,
    step: float = 1e-5,
    topology: NetworkTopology | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(weights)`` must return ``(loss, gradient)`` where ``gradient``
    is shape-congruent with ``weights``. Every trainable scalar is perturbed
    by ``+-step``; entries that are structurally zero under ``topology``'s
    static mask are skipped.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, grad = loss_fn(weights)
    grads = grad.arrays()
    work = weights.copy()
    arrays = work.arrays()
    if topology is None:
        entries = ((a, idx) for a, arr in enumerate(arrays) for idx in np.ndindex(arr.shape))
    else:
        entries = trainable_entries(work, topology)

    worst = 0.0
    for a_idx, idx in entries:
        target = arrays[a_idx]
        orig = target[idx]
        target[idx] = orig + step
        up = float(loss_fn(work)[0])
        target[idx] = orig - step
        down = float(loss_fn(work)[0])
        target[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite loss while perturbing entry {idx} of array {a_idx}")
        numeric = (up - down) / (2.0 * step)
        analytic = float(grads[a_idx][idx])
        denom = max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
