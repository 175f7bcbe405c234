import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import pdist

from penn.encoder import PosteriorParams
from penn.prior import (
    KernelSpec,
    KernelWeights,
    build_kernel_weights,
    complete_linkage_clusters,
    delta_to_n_clusters,
    kernel_value,
    prior_moments,
)


def same_partition(a, b):
    pairs_a = a[:, None] == a[None, :]
    pairs_b = b[:, None] == b[None, :]
    return np.array_equal(pairs_a, pairs_b)


def test_extreme_cluster_counts(rng):
    x = rng.standard_normal((9, 2))
    labels, d = complete_linkage_clusters(x, 9)
    assert len(set(labels)) == 9 and d == 0.0
    labels, d = complete_linkage_clusters(x, 1)
    assert set(labels) == {0}
    assert d == pytest.approx(pdist(x).max())
    with pytest.raises(ValueError):
        complete_linkage_clusters(x, 0)
    with pytest.raises(ValueError):
        complete_linkage_clusters(x, 10)


def brute_force_two_partition(points):
    # minimize the larger of the two clusters' diameters
    n = len(points)
    best, best_cost = None, np.inf
    for r in range(1, n):
        for group in itertools.combinations(range(n), r):
            lab = np.array([0 if i in group else 1 for i in range(n)])
            cost = max(np.ptp(points[lab == c]) for c in (0, 1))
            if cost < best_cost:
                best, best_cost = lab, cost
    return best


def test_line_points_two_clusters():
    pts = np.array([0.0, 0.1, 5.0, 5.2])
    labels, _ = complete_linkage_clusters(pts[:, None], 2)
    assert same_partition(labels, brute_force_two_partition(pts))
    assert list(labels) == [0, 0, 1, 1]


@given(st.integers(0, 2**31 - 1), st.integers(3, 40), st.integers(1, 3), st.data())
def test_matches_scipy_complete_linkage(seed, n, dim, data):
    x = np.random.default_rng(seed).standard_normal((n, dim))
    k = data.draw(st.integers(1, n))
    labels, threshold = complete_linkage_clusters(x, k)
    Z = linkage(x, method="complete")
    ref = cut_tree(Z, n_clusters=k).ravel()
    assert same_partition(labels, ref)
    expected = 0.0 if k == n else Z[n - k - 1, 2]
    assert threshold == pytest.approx(expected, rel=1e-12, abs=1e-12)
    # members of every cluster are closer than the next rejected merge
    if k > 1:
        d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
        nxt = Z[n - k, 2]
        for c in np.unique(labels):
            idx = labels == c
            assert d[np.ix_(idx, idx)].max() < nxt + 1e-12


def test_ties_are_deterministic():
    # equally spaced points: every adjacent pair ties; lowest pair merges first
    x = np.arange(6.0)[:, None]
    labels, d = complete_linkage_clusters(x, 5)
    assert list(labels) == [0, 0, 1, 2, 3, 4] and d == 1.0
    labels, _ = complete_linkage_clusters(x, 3)
    assert list(labels) == [0, 0, 1, 1, 2, 2]


@pytest.mark.parametrize("delta,n,expected", [(0.0, 50, 1), (1.0, 50, 50), (0.5, 101, 51), (0.2, 1, 1)])
def test_delta_to_n_clusters(delta, n, expected):
    assert delta_to_n_clusters(delta, n) == expected


@given(st.integers(1, 500), st.floats(0, 1), st.floats(0, 1))
def test_n_clusters_monotone_in_delta(n, d1, d2):
    lo, hi = sorted((d1, d2))
    assert 1 <= delta_to_n_clusters(lo, n) <= delta_to_n_clusters(hi, n) <= n


def test_delta_out_of_range():
    with pytest.raises(ValueError):
        delta_to_n_clusters(1.5, 10)
    with pytest.raises(ValueError):
        KernelSpec.disjoint(-0.1)
    with pytest.raises(ValueError):
        KernelSpec.tricube(0.0)


def test_kernel_values():
    assert kernel_value(0.0, "epanechnikov") == 0.75
    assert kernel_value(0.5, "tricube") == 0.669921875
    assert kernel_value(1.0, "tricube") == 0.0
    assert kernel_value(1.2, "epanechnikov") == 0.0


def test_disjoint_delta_one_is_identity(rng):
    pi = build_kernel_weights(rng.standard_normal((12, 2)), KernelSpec.disjoint(1.0))
    assert np.array_equal(pi.pi, np.eye(12)) and pi.is_identity


@given(st.integers(0, 2**31 - 1), st.sampled_from(["disjoint", "epanechnikov", "tricube"]), st.floats(0.05, 3.0))
def test_row_stochastic(seed, variant, param):
    x = np.random.default_rng(seed).standard_normal((25, 2))
    spec = KernelSpec.disjoint(min(param / 3, 1.0)) if variant == "disjoint" else KernelSpec(variant, bandwidth=param)
    pi = build_kernel_weights(x, spec).pi
    assert np.all(pi >= 0)
    assert np.max(np.abs(pi.sum(axis=1) - 1)) < 1e-12


def test_disjoint_structure(rng):
    x = rng.standard_normal((30, 2))
    kw = build_kernel_weights(x, KernelSpec.disjoint(0.2))
    pi, lab = kw.pi, kw.cluster_labels
    same = lab[:, None] == lab[None, :]
    assert np.array_equal(pi > 0, same)
    sizes = np.bincount(lab)[lab]
    assert np.allclose(pi[same], np.broadcast_to(1 / sizes[:, None], pi.shape)[same], rtol=0, atol=0)


def test_small_bandwidth_gives_identity(rng):
    x = rng.standard_normal((15, 3))
    dmin = pdist(x).min()
    for variant in ("epanechnikov", "tricube"):
        pi = build_kernel_weights(x, KernelSpec(variant, bandwidth=0.99 * dmin)).pi
        assert np.array_equal(pi, np.eye(15))


def test_prior_moments_identity_and_uniform(rng):
    post = PosteriorParams(rng.standard_normal((10, 3)), rng.uniform(0.1, 1, (10, 3)))
    mu_p, sd_p = prior_moments(KernelWeights(10, labels=np.arange(10)), post)
    assert np.array_equal(mu_p, post.mu_q) and np.array_equal(sd_p, post.sigma_q)
    mu_p, sd_p = prior_moments(KernelWeights(10, labels=np.zeros(10, dtype=int)), post)
    np.testing.assert_allclose(mu_p, np.tile(post.mu_q.mean(0), (10, 1)), rtol=0, atol=1e-15)
    np.testing.assert_allclose(sd_p, np.tile(post.sigma_q.mean(0), (10, 1)), rtol=0, atol=1e-15)


def test_prior_moments_cluster_means_and_dense_agree(rng):
    post = PosteriorParams(rng.standard_normal((8, 2)), rng.uniform(0.1, 1, (8, 2)))
    labels = np.array([0, 1, 0, 1, 1, 0, 2, 2])
    kw = KernelWeights(8, labels=labels)
    mu_p, sd_p = prior_moments(kw, post)
    for c in range(3):
        idx = labels == c
        np.testing.assert_allclose(mu_p[idx], np.tile(post.mu_q[idx].mean(0), (idx.sum(), 1)), atol=1e-15)
        np.testing.assert_allclose(sd_p[idx], np.tile(post.sigma_q[idx].mean(0), (idx.sum(), 1)), atol=1e-15)
    dense = KernelWeights(8, dense=kw.pi)
    np.testing.assert_allclose(dense.apply(post.mu_q), mu_p, atol=1e-15)
    np.testing.assert_allclose(dense.apply_transpose(post.mu_q), kw.pi.T @ post.mu_q, atol=1e-15)
