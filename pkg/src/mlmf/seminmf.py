"""Semi-NMF (``X ~ O Q`` with ``Q >= 0``) and deep layer-wise pretraining.

Multiplicative updates follow Ding, Li & Jordan, "Convex and Semi-Nonnegative
Matrix Factorizations"; the deep stack follows Trigeorgis et al., "A Deep
Matrix Factorization Method for Learning Attribute Representations".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import NonDecreasingLayers, NonFiniteInput, RankTooLarge

EPS_INIT = 1e-6
DENOM_FLOOR = 1e-12
PINV_RCOND = 1e-10


def pos(M):
    return (np.abs(M) + M) / 2


def neg(M):
    return (np.abs(M) - M) / 2


def pinv(M):
    return np.linalg.pinv(M, rcond=PINV_RCOND)


def multiplicative_update(A, B, C):
    """One step of ``A <- A * sqrt((B+ + C- A) / (B- + C+ A))``.

    Decreases ``tr(A' C A) - 2 tr(B' A)`` over ``A >= 0`` for symmetric C.
    """
    num = pos(B) + neg(C) @ A
    den = np.maximum(neg(B) + pos(C) @ A, DENOM_FLOOR)
    return A * np.sqrt(num / den)


def chain(mats):
    """Left-to-right product of a non-empty list of matrices."""
    return reduce(np.matmul, mats)


@dataclass
class SemiNmfFactors:
    basis: np.ndarray
    coefficients: np.ndarray

    def reconstruct(self):
        return self.basis @ self.coefficients


@dataclass
class FactorStack:
    """Per-view deep factors.

    ``Z[i]`` has shape ``d_{i-1} x d_i`` (``d_0 = D_v``) and ``H[i]`` shape
    ``d_i x N_v``; only ``H[-1]`` enters the objectives, the shallower ``H``
    are kept as layer-local representations.
    """

    view_name: str
    Z: list
    H: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.Z)

    @property
    def Hm(self):
        return self.H[-1]

    def psi(self, i: int):
        """Product ``Z_1 ... Z_i`` (1-based ``i``)."""
        return chain(self.Z[:i])

    def reconstruct(self):
        return chain(self.Z) @ self.H[-1]

    def copy(self) -> "FactorStack":
        return FactorStack(self.view_name, [z.copy() for z in self.Z],
                           [None if h is None else h.copy() for h in self.H])


def _residual(X, O, Q):
    return float(np.linalg.norm(X - O @ Q))


def semi_nmf(matrix, k, max_iters=500, tol=1e-6, seed=0, init="svd"):
    """Factorize ``matrix`` (D x N) as ``basis @ coefficients`` with
    nonnegative coefficients.

    Parameters
    ----------
    matrix : array, shape (D, N)
    k : int
        Inner rank, at most ``min(D, N)``.
    max_iters, tol
        Stop after ``max_iters`` sweeps or when the relative change of the
        residual drops below ``tol``.
    seed : int
        Only used by ``init="random"``; the default SVD start is deterministic.

    Returns
    -------
    factors : SemiNmfFactors
    loss_trace : list of float
        Frobenius residual ``||X - O Q||_F``, starting with the initial point.
    """
    X = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("semi_nmf input contains NaN or Inf")
    D, N = X.shape
    if not 1 <= k <= min(D, N):
        raise RankTooLarge(f"rank {k} not in [1, min(D, N) = {min(D, N)}]")

    if init == "svd":
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        O = U[:, :k] * s[:k]
        Q = np.maximum(Vt[:k], EPS_INIT)
    elif init == "random":
        rng = np.random.default_rng(seed)
        Q = rng.uniform(EPS_INIT, 1.0, size=(k, N))
        O = X @ pinv(Q)
    else:
        raise ValueError(f"unknown init {init!r}")

    trace = [_residual(X, O, Q)]
    for _ in range(max_iters):
        O = X @ pinv(Q)
        Q = multiplicative_update(Q, O.T @ X, O.T @ O)
        trace.append(_residual(X, O, Q))
        prev, cur = trace[-2], trace[-1]
        if prev == 0.0 or abs(prev - cur) / prev < tol:
            break
    return SemiNmfFactors(O, Q), trace


def shared_semi_nmf(matrices, positions, n_samples, k, max_iters=500, tol=1e-6):
    """Semi-NMF of several views sharing one coefficient matrix.

    View ``v`` (``D_v x N_v``) is fit as ``O_v @ Q[:, positions[v]]`` with a
    common nonnegative ``Q`` of shape ``k x n_samples``; every sample must be
    present in at least one view. Absent samples contribute nothing, so no
    values are imputed.

    Returns ``(bases, Q, loss_trace)`` with the trace holding the residual
    norm over all observed entries.
    """
    Xs = [np.asarray(X, dtype=float) for X in matrices]
    pos_ = [np.asarray(p) for p in positions]
    if any(not np.all(np.isfinite(X)) for X in Xs):
        raise NonFiniteInput("shared_semi_nmf input contains NaN or Inf")
    if not 1 <= k <= min(sum(X.shape[0] for X in Xs), n_samples):
        raise RankTooLarge(f"rank {k} too large for the stacked views")

    # start from the SVD of the stacked views with absent samples mean-filled
    blocks = []
    for X, p in zip(Xs, pos_):
        B = np.repeat(X.mean(axis=1, keepdims=True), n_samples, axis=1)
        B[:, p] = X
        blocks.append(B)
    _, _, Vt = np.linalg.svd(np.vstack(blocks), full_matrices=False)
    Q = np.maximum(Vt[:k], EPS_INIT)

    def residual(Os, Q):
        return float(np.sqrt(sum(np.sum((X - O @ Q[:, p]) ** 2)
                                 for X, O, p in zip(Xs, Os, pos_))))

    Os = [X @ pinv(Q[:, p]) for X, p in zip(Xs, pos_)]
    trace = [residual(Os, Q)]
    for _ in range(max_iters):
        Os = [X @ pinv(Q[:, p]) for X, p in zip(Xs, pos_)]
        B = np.zeros_like(Q)
        CpQ = np.zeros_like(Q)
        CnQ = np.zeros_like(Q)
        for X, O, p in zip(Xs, Os, pos_):
            C = O.T @ O
            B[:, p] += O.T @ X
            CpQ[:, p] += pos(C) @ Q[:, p]
            CnQ[:, p] += neg(C) @ Q[:, p]
        Q = Q * np.sqrt((pos(B) + CnQ) / np.maximum(neg(B) + CpQ, DENOM_FLOOR))
        trace.append(residual(Os, Q))
        prev, cur = trace[-2], trace[-1]
        if prev == 0.0 or abs(prev - cur) / prev < tol:
            break
    Os = [X @ pinv(Q[:, p]) for X, p in zip(Xs, pos_)]
    return Os, Q, trace


def pretrain_shared(matrices, positions, n_samples, layer_sizes, seed=0,
                    max_iters=500, tol=1e-6, view_names=None, balance=True):
    """Layer-wise pretraining with latents shared across views.

    The first layer is a :func:`shared_semi_nmf`; deeper layers factor the
    shared (complete) latent with :func:`semi_nmf`. Every view receives its
    own ``Z_1``, copies of the shared deeper ``Z_i``, and the columns of each
    shared ``H_i`` for its present samples.
    """
    sizes = check_layer_sizes(layer_sizes)
    Os, Q, _ = shared_semi_nmf(matrices, positions, n_samples, sizes[0],
                               max_iters=max_iters, tol=tol)
    if balance:
        norms = np.sqrt(sum(np.sum(O ** 2, axis=0) for O in Os))
        norms[norms == 0] = 1.0
        Os = [O / norms for O in Os]
        Q = Q * norms[:, None]
    Zs, Hs = [], [Q]
    if len(sizes) > 1:
        deeper = pretrain_stack(Q, sizes[1:], seed=seed, max_iters=max_iters, tol=tol,
                                balance=balance, prefix=np.vstack(Os))
        Zs, Hs = list(deeper.Z), [Q] + list(deeper.H)
    names = view_names or [""] * len(Os)
    stacks = []
    for O, p, name in zip(Os, positions, names):
        stacks.append(FactorStack(name, [O.copy()] + [z.copy() for z in Zs],
                                  [h[:, p].copy() for h in Hs]))
    return stacks


def check_layer_sizes(layer_sizes):
    sizes = [int(d) for d in layer_sizes]
    if not sizes or any(d < 1 for d in sizes):
        raise NonDecreasingLayers(f"layer sizes must be positive, got {sizes}")
    if any(a <= b for a, b in zip(sizes, sizes[1:])):
        raise NonDecreasingLayers(f"layer sizes must strictly decrease, got {sizes}")
    return sizes


def pretrain_stack(matrix, layer_sizes, seed=0, max_iters=500, tol=1e-6,
                   view_name="", balance=True, prefix=None):
    """Greedy layer-wise Semi-NMF: factor X, then each new H in turn.

    With ``balance`` each layer is rescaled (``Z_i D^-1``, ``D H_i``) so that
    the columns of ``Z_1 ... Z_i`` have unit norm. Products are unchanged,
    but the latent rows then carry the scale of what they reconstruct, which
    is what makes distances between latent columns meaningful. ``prefix`` is
    a basis already applied in front of ``matrix`` and is included in the
    column norms.
    """
    sizes = check_layer_sizes(layer_sizes)
    Z, H = [], []
    current = np.asarray(matrix, dtype=float)
    for d in sizes:
        f, _ = semi_nmf(current, d, max_iters=max_iters, tol=tol, seed=seed)
        Zi, Hi = f.basis, f.coefficients
        if balance:
            head = [] if prefix is None else [prefix]
            norms = np.linalg.norm(chain(head + Z + [Zi]), axis=0)
            norms[norms == 0] = 1.0
            Zi = Zi / norms
            Hi = Hi * norms[:, None]
        Z.append(Zi)
        H.append(Hi)
        current = Hi
    return FactorStack(view_name, Z, H)
