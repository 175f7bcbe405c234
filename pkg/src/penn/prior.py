"""Kernel weighting over observations and the conditional prior it induces.

The default kernel partitions the encoder input space into disjoint regimes
with complete-linkage agglomerative clustering; each observation's prior is
the average posterior of its regime. Epanechnikov and tri-cube kernels give
smooth, overlapping neighborhoods instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from penn.diffcore import ShapeError
from penn.encoder import PosteriorParams

KERNELS = ("disjoint", "epanechnikov", "tricube")


@dataclass(frozen=True)
class KernelSpec:
    """``variant`` is one of ``disjoint`` (uses ``delta``), ``epanechnikov`` or
    ``tricube`` (use ``bandwidth``)."""

    variant: str = "disjoint"
    delta: float = 0.2
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.variant not in KERNELS:
            raise ValueError(f"kernel variant must be one of {KERNELS}, got {self.variant!r}")
        if self.variant == "disjoint" and not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.variant != "disjoint" and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @classmethod
    def disjoint(cls, delta: float) -> "KernelSpec":
        return cls("disjoint", delta=float(delta))

    @classmethod
    def epanechnikov(cls, bandwidth: float) -> "KernelSpec":
        return cls("epanechnikov", bandwidth=float(bandwidth))

    @classmethod
    def tricube(cls, bandwidth: float) -> "KernelSpec":
        return cls("tricube", bandwidth=float(bandwidth))

    def to_dict(self) -> dict:
        return {"variant": self.variant, "delta": self.delta, "bandwidth": self.bandwidth}


@dataclass
class KernelWeights:
    """Row-stochastic N x N weighting over observations.

    Disjoint weights are stored as cluster labels and applied by group
    averaging; the dense matrix is only built on request via :attr:`pi`.
    """

    n: int
    labels: np.ndarray | None = None
    dense: np.ndarray | None = None
    merge_threshold: float | None = None

    @property
    def pi(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        counts = np.bincount(self.labels)
        same = self.labels[:, None] == self.labels[None, :]
        return same / counts[self.labels][:, None]

    @property
    def cluster_labels(self) -> np.ndarray | None:
        return self.labels

    @property
    def is_identity(self) -> bool:
        if self.labels is not None:
            return len(np.unique(self.labels)) == self.n
        return bool(np.array_equal(self.dense, np.eye(self.n)))

    def apply(self, m: np.ndarray) -> np.ndarray:
        """``pi @ m``."""
        if m.shape[0] != self.n:
            raise ShapeError(f"kernel weights cover {self.n} rows, got matrix with {m.shape[0]}")
        if self.dense is not None:
            return self.dense @ m
        counts = np.bincount(self.labels)
        sums = np.zeros((counts.size,) + m.shape[1:])
        np.add.at(sums, self.labels, m)
        return (sums / counts.reshape((-1,) + (1,) * (m.ndim - 1)))[self.labels]

    def apply_transpose(self, m: np.ndarray) -> np.ndarray:
        """``pi.T @ m``; the disjoint matrix is symmetric."""
        if self.dense is not None:
            return self.dense.T @ m
        return self.apply(m)


def delta_to_n_clusters(delta: float, n: int) -> int:
    """Number of regimes ``round(1 + delta (n - 1))``, halves rounded up."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return int(min(max(math.floor(1.0 + delta * (n - 1) + 0.5), 1), n))


def complete_linkage_clusters(x: np.ndarray, n_clusters: int) -> tuple[np.ndarray, float]:
    """Agglomerative complete-linkage clustering with Euclidean distance.

    Clusters are merged, closest pair first, until ``n_clusters`` remain. The
    distance between clusters is the largest pairwise distance between their
    members. Equal merge distances are resolved toward the lowest pair of
    cluster slots (a cluster occupies the slot of its smallest member).

    Returns:
        labels: cluster index per row, numbered by first appearance.
        merge_threshold: distance of the last accepted merge (0 if none).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must lie in [1, {n}], got {n_clusters}")
    slot = np.arange(n)
    if n_clusters == n:
        return slot.copy(), 0.0

    dist = cdist(x, x)
    # only the upper triangle is consulted; everything else is +inf
    dist[np.tril_indices(n)] = np.inf
    active = np.ones(n, dtype=bool)
    nn = np.empty(n, dtype=np.int64)
    nn_d = np.full(n, np.inf)

    def refresh(i: int) -> None:
        if i == n - 1:
            nn[i], nn_d[i] = -1, np.inf
            return
        j = int(np.argmin(dist[i, i + 1 :])) + i + 1
        nn[i], nn_d[i] = j, dist[i, j]

    for i in range(n):
        refresh(i)

    last = 0.0
    for _ in range(n - n_clusters):
        a = int(np.argmin(nn_d))
        b = int(nn[a])
        last = float(nn_d[a])
        # merged cluster keeps slot a (a < b); complete linkage takes the max
        col = np.maximum(dist[:a, a], dist[:a, b])
        dist[:a, a] = col
        row_ab = np.maximum(dist[a, a + 1 :], np.concatenate([dist[a + 1 : b, b], dist[b, b:]]))
        dist[a, a + 1 :] = row_ab
        dist[a, b] = np.inf
        dist[:b, b] = np.inf
        dist[b, b:] = np.inf
        active[b] = False
        nn_d[b] = np.inf
        slot[slot == b] = a
        refresh(a)
        stale = np.flatnonzero(active & ((nn == a) | (nn == b)))
        for i in stale:
            if i != a:
                refresh(int(i))

    _, labels = np.unique(slot, return_inverse=True)
    # unique() orders by slot, which is the smallest member index
    return labels.astype(np.int64), last


def _compact_kernel(a: np.ndarray, variant: str) -> np.ndarray:
    inside = a < 1.0
    if variant == "epanechnikov":
        return np.where(inside, 0.75 * (1.0 - a * a), 0.0)
    return np.where(inside, (1.0 - a**3) ** 3, 0.0)


def kernel_value(a: np.ndarray | float, variant: str) -> np.ndarray:
    """Unnormalized compact kernel H(a) for scaled distance ``a``."""
    if variant not in ("epanechnikov", "tricube"):
        raise ValueError(f"no closed-form H(a) for kernel {variant!r}")
    return _compact_kernel(np.asarray(a, dtype=np.float64), variant)


def build_kernel_weights(x: np.ndarray, spec: KernelSpec) -> KernelWeights:
    """Weighting matrix over the rows of ``x`` (standardized encoder inputs)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise ValueError("kernel inputs contain non-finite values")
    n = x.shape[0]
    if spec.variant == "disjoint":
        n_clusters = delta_to_n_clusters(spec.delta, n)
        if n_clusters == 1:
            return KernelWeights(n, labels=np.zeros(n, dtype=np.int64), merge_threshold=np.inf)
        labels, threshold = complete_linkage_clusters(x, n_clusters)
        return KernelWeights(n, labels=labels, merge_threshold=threshold)

    raw = _compact_kernel(cdist(x, x) / spec.bandwidth, spec.variant)
    rowsum = raw.sum(axis=1)
    assert np.all(rowsum > 0), "compact kernel row without support"  # H(0) > 0 on the diagonal
    return KernelWeights(n, dense=raw / rowsum[:, None])


def prior_moments(pi: KernelWeights, post: PosteriorParams) -> tuple[np.ndarray, np.ndarray]:
    """Prior means and standard deviations, ``pi @ mu_q`` and ``pi @ sigma_q``."""
    if pi.n != post.shape[0]:
        raise ShapeError(f"kernel weights cover {pi.n} rows, posterior has {post.shape[0]}")
    return pi.apply(post.mu_q), pi.apply(post.sigma_q)
