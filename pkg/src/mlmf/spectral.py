"""Spectral clustering of a consensus embedding.

kNN Gaussian affinity (an edge if either point is among the other's
neighbours), symmetric normalized Laplacian ``I - D^-1/2 W D^-1/2``, the
eigenvectors of its k smallest eigenvalues, then k-means++/Lloyd.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateEmbedding,
    EigensolveFailure,
    EmptyClusterUnrecoverable,
    IsolatedVertex,
    ShapeMismatch,
)


@dataclass(frozen=True)
class SimilarityGraph:
    W: np.ndarray
    k_neighbors: int
    sigma: float


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    global_ids: tuple
    k: int
    wcss: float = float("nan")

    def sizes(self):
        return np.bincount(self.labels, minlength=self.k)


def default_k_neighbors(n: int) -> int:
    return min(n - 1, math.ceil(math.log2(n)) + 1)


def _points(H):
    # embeddings are d x N; rows of the returned array are samples
    return np.asarray(getattr(H, "H", H), dtype=float).T


def sq_distances(P):
    sq = np.sum(P ** 2, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * P @ P.T
    np.maximum(D2, 0.0, out=D2)
    np.fill_diagonal(D2, 0.0)
    return D2


def knn_mask(D2, k):
    """Boolean matrix: ``mask[i, j]`` iff j is among the k nearest of i.

    Ties are broken by sample index.
    """
    n = D2.shape[0]
    masked = D2.copy()
    np.fill_diagonal(masked, np.inf)
    order = np.argsort(masked, axis=1, kind="stable")[:, :k]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), k), order.ravel()] = True
    return mask


def auto_sigma(D2, mask):
    """Median distance over the kNN edges, falling back to the mean of the
    positive ones when the median is zero."""
    d = np.sqrt(D2[mask])
    sigma = float(np.median(d))
    if sigma <= 0.0:
        positive = d[d > 0]
        sigma = float(positive.mean()) if positive.size else 0.0
    return sigma


def knn_similarity(H, k_neighbors=None, sigma=None):
    """Symmetric kNN affinity ``W_ij = exp(-|h_i - h_j|^2 / (2 sigma^2))``.

    ``H`` is a ``d x N`` array or a ConsensusEmbedding. ``None`` selects the
    default neighbour count / self-tuned sigma.
    """
    P = _points(H)
    n = P.shape[0]
    if n < 2:
        raise ShapeMismatch("need at least two samples to build a graph")
    k = default_k_neighbors(n) if k_neighbors is None else int(k_neighbors)
    if not 1 <= k < n:
        raise ValueError(f"k_neighbors must be in [1, {n - 1}], got {k}")
    D2 = sq_distances(P)
    mask = knn_mask(D2, k)
    if sigma is None:
        sigma = auto_sigma(D2, mask)
    if not np.any(D2 > 0):
        warnings.warn("all embedded points coincide; using a complete graph",
                      DegenerateEmbedding, stacklevel=2)
        W = np.ones((n, n)) - np.eye(n)
        return SimilarityGraph(W, k, float(sigma) if sigma else 1.0)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    edges = mask | mask.T
    # far neighbours would underflow to 0 and drop out of the graph; keep
    # every kNN edge strictly positive
    affinity = np.maximum(np.exp(-D2 / (2.0 * sigma ** 2)), np.finfo(float).tiny)
    W = np.where(edges, affinity, 0.0)
    np.fill_diagonal(W, 0.0)
    return SimilarityGraph(W, k, float(sigma))


def normalized_laplacian(W):
    W = np.asarray(getattr(W, "W", W), dtype=float)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise IsolatedVertex(f"{int(np.sum(deg <= 0))} vertex/vertices have zero degree")
    s = 1.0 / np.sqrt(deg)
    L = np.eye(len(deg)) - s[:, None] * W * s[None, :]
    return (L + L.T) / 2


def spectral_embed(L, k, normalize_rows=True):
    """Eigenvectors of the k smallest eigenvalues of ``L`` as columns.

    With ``normalize_rows`` each row is scaled to unit length afterwards
    (zero rows are left as they are).
    """
    n = L.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    try:
        _, vecs = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailure(str(exc)) from None
    B = vecs[:, :k]
    if normalize_rows:
        norms = np.linalg.norm(B, axis=1, keepdims=True)
        B = np.divide(B, norms, out=np.zeros_like(B), where=norms > 0)
    return B


def _kmeanspp(P, k, rng):
    n = P.shape[0]
    centers = np.empty((k, P.shape[1]))
    chosen = [int(rng.integers(n))]
    centers[0] = P[chosen[0]]
    d2 = np.sum((P - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a center; take an unused one
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        centers[c] = P[idx]
        d2 = np.minimum(d2, np.sum((P - centers[c]) ** 2, axis=1))
    return centers


def _assign(P, centers):
    d2 = np.sum((P[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(P)), labels]


def lloyd(P, centers, max_iter=300, tol=0.0, history=None):
    """Lloyd iterations from ``centers``; empty clusters are re-seeded with
    the point farthest from its center."""
    k = len(centers)
    for _ in range(max_iter):
        labels, d2 = _assign(P, centers)
        if history is not None:
            history.append(float(d2.sum()))
        for _attempt in range(k):
            counts = np.bincount(labels, minlength=k)
            empty = np.flatnonzero(counts == 0)
            if empty.size == 0:
                break
            far = np.argsort(-d2, kind="stable")
            for c, idx in zip(empty, far):
                labels[idx] = c
                d2[idx] = 0.0
        if np.any(np.bincount(labels, minlength=k) == 0):
            raise EmptyClusterUnrecoverable("could not fill every cluster")
        new = np.stack([P[labels == c].mean(axis=0) for c in range(k)])
        shift = float(np.sum((new - centers) ** 2))
        centers = new
        if shift <= tol:
            break
    labels, d2 = _assign(P, centers)
    if history is not None:
        history.append(float(d2.sum()))
    return labels, centers, float(d2.sum())


def kmeans(points, k, restarts=10, seed=0, max_iter=300, global_ids=None):
    """k-means++ seeded Lloyd's algorithm; best of ``restarts`` by WCSS."""
    P = np.asarray(points, dtype=float)
    n = P.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, _, wcss = lloyd(P, _kmeanspp(P, k, rng), max_iter=max_iter)
        if best is None or wcss < best[1] - 1e-12:
            best = (labels, wcss)
    labels = _canonical_labels(best[0])
    ids = tuple(global_ids) if global_ids is not None else tuple(str(i) for i in range(n))
    return ClusterAssignment(labels, ids, k, best[1])


def _canonical_labels(labels):
    """Renumber clusters by order of first appearance."""
    mapping = {}
    out = np.empty_like(labels)
    for i, c in enumerate(labels):
        out[i] = mapping.setdefault(int(c), len(mapping))
    return out


def spectral_cluster(H, k, k_neighbors=None, sigma=None, seed=0, restarts=10,
                     normalize_rows=True):
    """Cluster the columns of a ``d x N`` embedding into ``k`` groups."""
    graph = knn_similarity(H, k_neighbors, sigma)
    L = normalized_laplacian(graph.W)
    B = spectral_embed(L, k, normalize_rows=normalize_rows)
    ids = getattr(H, "global_ids", None) or None
    return kmeans(B, k, restarts=restarts, seed=seed, global_ids=ids)
