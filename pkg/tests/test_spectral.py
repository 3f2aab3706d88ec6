import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlmf.errors import DegenerateEmbedding, IsolatedVertex, ShapeMismatch
from mlmf.evaluation import ari
from mlmf.spectral import (
    default_k_neighbors,
    kmeans,
    knn_similarity,
    lloyd,
    normalized_laplacian,
    spectral_cluster,
    spectral_embed,
)


def brute_force_affinity(P, k, sigma):
    """Loop-level kNN graph: edge when either endpoint lists the other."""
    n = len(P)
    near = []
    for i in range(n):
        d = sorted((float(np.sum((P[i] - P[j]) ** 2)), j) for j in range(n) if j != i)
        near.append({j for _, j in d[:k]})
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and (j in near[i] or i in near[j]):
                W[i, j] = math.exp(-float(np.sum((P[i] - P[j]) ** 2)) / (2 * sigma ** 2))
    return W


def blobs(seed, n_per=20, k=3, dim=4, spread=10.0):
    r = np.random.default_rng(seed)
    centers = r.standard_normal((k, dim)) * spread
    labels = np.repeat(np.arange(k), n_per)
    return (centers[labels] + r.standard_normal((len(labels), dim))).T, labels


class TestSimilarity:
    def test_two_points(self):
        g = knn_similarity(np.array([[0.0, 3.0]]))
        # sigma is the single neighbour distance, so the weight is exp(-1/2)
        assert g.sigma == 3.0
        np.testing.assert_allclose(g.W, [[0, math.exp(-0.5)], [math.exp(-0.5), 0]])

    def test_against_brute_force(self, rng):
        H = rng.standard_normal((3, 20))
        g = knn_similarity(H, k_neighbors=4, sigma=1.3)
        np.testing.assert_allclose(g.W, brute_force_affinity(H.T, 4, 1.3), rtol=1e-12, atol=1e-300)

    def test_symmetric_zero_diagonal(self, rng):
        W = knn_similarity(rng.standard_normal((2, 30))).W
        np.testing.assert_array_equal(W, W.T)
        assert np.all(np.diag(W) == 0)
        # every vertex keeps its own k neighbours
        assert np.all((W > 0).sum(axis=1) >= default_k_neighbors(30))

    def test_far_edges_stay_positive(self):
        H = np.array([[0.0, 0.1, 1e3, 1e3 + 0.1]])
        W = knn_similarity(H, k_neighbors=2).W
        assert W[1, 2] > 0

    def test_default_neighbours(self):
        assert default_k_neighbors(150) == 9
        assert default_k_neighbors(3) == 2

    def test_coincident_points_warn(self):
        with pytest.warns(DegenerateEmbedding):
            g = knn_similarity(np.ones((2, 5)))
        np.testing.assert_array_equal(g.W, np.ones((5, 5)) - np.eye(5))

    def test_errors(self, rng):
        with pytest.raises(ShapeMismatch):
            knn_similarity(np.zeros((2, 1)))
        with pytest.raises(ValueError):
            knn_similarity(rng.standard_normal((2, 5)), k_neighbors=5)
        with pytest.raises(ValueError):
            knn_similarity(rng.standard_normal((2, 5)), sigma=-1.0)


class TestLaplacian:
    def test_triangle(self):
        L = normalized_laplacian(np.ones((3, 3)) - np.eye(3))
        np.testing.assert_allclose(np.linalg.eigvalsh(L), [0, 1.5, 1.5], atol=1e-12)

    def test_components_give_zero_eigenvalues(self):
        W = np.kron(np.eye(2), np.array([[0, 1], [1, 0]]))
        ev = np.linalg.eigvalsh(normalized_laplacian(W))
        np.testing.assert_allclose(ev, [0, 0, 2, 2], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2 ** 31))
    def test_spectrum_in_unit_bound(self, n, seed):
        r = np.random.default_rng(seed)
        A = r.uniform(0.01, 1.0, size=(n, n))
        W = np.triu(A, 1) + np.triu(A, 1).T
        ev = np.linalg.eigvalsh(normalized_laplacian(W))
        assert ev.min() >= -1e-10
        assert ev.max() <= 2 + 1e-10
        assert abs(ev.min()) < 1e-10

    def test_isolated_vertex(self):
        W = np.zeros((3, 3))
        W[0, 1] = W[1, 0] = 1.0
        with pytest.raises(IsolatedVertex):
            normalized_laplacian(W)


class TestEmbed:
    def test_orthonormal_columns(self, rng):
        L = normalized_laplacian(knn_similarity(rng.standard_normal((3, 25))).W)
        B = spectral_embed(L, 4, normalize_rows=False)
        np.testing.assert_allclose(B.T @ B, np.eye(4), atol=1e-10)

    def test_unit_rows(self, rng):
        L = normalized_laplacian(knn_similarity(rng.standard_normal((3, 25))).W)
        np.testing.assert_allclose(np.linalg.norm(spectral_embed(L, 3), axis=1), 1.0)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            spectral_embed(np.eye(3), 4)


class TestKmeans:
    def test_k_equals_n_is_exact(self, rng):
        res = kmeans(rng.standard_normal((7, 2)), 7)
        assert res.wcss == 0.0
        assert sorted(res.labels) == list(range(7))

    def test_single_cluster_is_centroid(self, rng):
        P = rng.standard_normal((10, 3))
        res = kmeans(P, 1)
        assert res.wcss == pytest.approx(np.sum((P - P.mean(axis=0)) ** 2))

    def test_lloyd_wcss_non_increasing(self):
        for seed in range(20):
            r = np.random.default_rng(seed)
            P = r.standard_normal((40, 3))
            hist = []
            lloyd(P, P[r.choice(40, 4, replace=False)].copy(), history=hist)
            assert np.all(np.diff(hist) <= 1e-9), seed

    def test_labels_canonical(self, rng):
        P = np.concatenate([rng.normal(5, 0.1, (5, 2)), rng.normal(-5, 0.1, (5, 2))])
        np.testing.assert_array_equal(kmeans(P, 2).labels, [0] * 5 + [1] * 5)

    def test_seeded(self, rng):
        P = rng.standard_normal((30, 2))
        a, b = kmeans(P, 3, seed=4), kmeans(P, 3, seed=4)
        np.testing.assert_array_equal(a.labels, b.labels)


class TestSpectralCluster:
    @pytest.mark.parametrize("seed", range(10))
    def test_planted_blobs(self, seed):
        H, labels = blobs(seed)
        assert ari(spectral_cluster(H, 3, seed=seed).labels, labels) == 1.0

    def test_permutation_equivariant(self, rng):
        H, _ = blobs(3)
        perm = rng.permutation(H.shape[1])
        a = spectral_cluster(H, 3).labels
        b = spectral_cluster(H[:, perm], 3).labels
        assert ari(a[perm], b) == 1.0

    def test_scale_invariant(self):
        H, _ = blobs(5)
        a = spectral_cluster(H, 3).labels
        np.testing.assert_array_equal(spectral_cluster(H * 37.5, 3).labels, a)

    def test_sizes_and_ids(self):
        H, _ = blobs(1, n_per=10)
        res = spectral_cluster(H, 3)
        assert res.sizes().sum() == 30
        assert res.global_ids == tuple(str(i) for i in range(30))
