"""Linear multi-layer factorization with a shared consensus embedding.

Objective, summed over views ``v``::

    ||X_v - Z_1 ... Z_m H_m||^2 + lam1 tr(H_m H_m' E) + lam2 ||H_m - H G_v||^2

with ``H_m >= 0``, ``E`` the all-ones ``d_m x d_m`` matrix and ``G_v`` the
``N x N_v`` sample indicator. Each block update below is exact or monotone,
so a full sweep never increases the objective.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .data import MultiOmicsDataset
from .errors import RankTooLarge, ShapeMismatch, SingularNormalMatrix
from .seminmf import (
    FactorStack,
    check_layer_sizes,
    chain,
    multiplicative_update,
    pinv,
    pretrain_shared,
    pretrain_stack,
)


@dataclass
class SolverConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    layer_sizes: tuple = (20, 10)
    max_iters: int = 20
    tol: float = 1e-6
    seed: int = 0
    consensus_init: str = "pretrained"  # or "random"
    pretrain: str = "joint"  # or "per_view"
    pretrain_iters: int = 500

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")
        self.layer_sizes = tuple(check_layer_sizes(self.layer_sizes))
        if self.consensus_init not in ("pretrained", "random"):
            raise ValueError(f"unknown consensus_init {self.consensus_init!r}")
        if self.pretrain not in ("joint", "per_view"):
            raise ValueError(f"unknown pretrain mode {self.pretrain!r}")

    def to_dict(self):
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d


@dataclass
class ConsensusEmbedding:
    """``d x N`` shared representation; column j belongs to ``global_ids[j]``."""

    H: np.ndarray
    global_ids: tuple = field(default=())

    @property
    def dim(self):
        return self.H.shape[0]


class FitResult(NamedTuple):
    stacks: list
    embedding: ConsensusEmbedding
    loss_trace: list
    info: dict


def _as_array(H):
    return H.H if isinstance(H, ConsensusEmbedding) else np.asarray(H, dtype=float)


def select(H, indicator):
    """``H @ G``; ``indicator=None`` stands for the identity selector."""
    if indicator is None:
        return H
    return H @ indicator.entries


def _check_shapes(stack, X, H, indicator):
    m = stack.depth
    if stack.Z[0].shape[0] != X.shape[0]:
        raise ShapeMismatch(f"view {stack.view_name!r}: Z_1 has {stack.Z[0].shape[0]} rows, "
                            f"data has {X.shape[0]} features")
    for i in range(1, m):
        if stack.Z[i - 1].shape[1] != stack.Z[i].shape[0]:
            raise ShapeMismatch(f"view {stack.view_name!r}: Z_{i} and Z_{i + 1} do not chain")
    Hm = stack.Hm
    if Hm.shape != (stack.Z[-1].shape[1], X.shape[1]):
        raise ShapeMismatch(f"view {stack.view_name!r}: H_m has shape {Hm.shape}")
    if H is not None:
        n_cols = X.shape[1] if indicator is None else indicator.shape[0]
        if H.shape != (Hm.shape[0], n_cols):
            raise ShapeMismatch(f"consensus has shape {H.shape}, expected "
                                f"{(Hm.shape[0], n_cols)}")
        if indicator is not None and indicator.shape[1] != X.shape[1]:
            raise ShapeMismatch(f"indicator for {stack.view_name!r} has {indicator.shape[1]} "
                                f"columns, view has {X.shape[1]} samples")


def _view_matrices(dataset):
    if isinstance(dataset, MultiOmicsDataset):
        return [v.matrix for v in dataset.views]
    return [np.asarray(X, dtype=float) for X in dataset]


def sparsity_term(Hm):
    """``tr(H H' E)``, i.e. the squared sum of each column for ``H >= 0``."""
    return float(np.sum(Hm.sum(axis=0) ** 2))


def linear_loss(stacks, H, dataset, indicators, config):
    """Linear objective summed over views.

    ``dataset`` may be a :class:`MultiOmicsDataset` or a list of view
    matrices; ``indicators`` may be ``None`` for complete, identically ordered
    views.
    """
    Hc = _as_array(H)
    Xs = _view_matrices(dataset)
    inds = indicators if indicators is not None else [None] * len(Xs)
    if not len(stacks) == len(Xs) == len(inds):
        raise ShapeMismatch("stacks, views and indicators differ in number")
    total = 0.0
    for st, X, G in zip(stacks, Xs, inds):
        _check_shapes(st, X, Hc, G)
        total += float(np.sum((X - st.reconstruct()) ** 2))
        total += config.lambda1 * sparsity_term(st.Hm)
        total += config.lambda2 * float(np.sum((st.Hm - select(Hc, G)) ** 2))
    return total


def update_Z(stack, i, X):
    """Least-squares update of ``Z_i`` (1-based) with everything else fixed:
    ``Z_i = pinv(Z_1..Z_{i-1}) X pinv(Z_{i+1}..Z_m H_m)``."""
    m = stack.depth
    if not 1 <= i <= m:
        raise ShapeMismatch(f"layer {i} out of range 1..{m}")
    right = chain(stack.Z[i:] + [stack.Hm])
    Zi = X @ pinv(right)
    if i > 1:
        Zi = pinv(stack.psi(i - 1)) @ Zi
    return Zi


def update_Hm(stack, H, indicator, config, X):
    """Multiplicative update of the deepest latent, including the sparsity
    and consensus terms."""
    Hc = _as_array(H)
    psi = stack.psi(stack.depth)
    d = psi.shape[1]
    B = psi.T @ X + config.lambda2 * select(Hc, indicator)
    C = psi.T @ psi + config.lambda1 * np.ones((d, d)) + config.lambda2 * np.eye(d)
    return multiplicative_update(stack.Hm, B, C)


def update_Hi(stack, i, X):
    """Multiplicative update of an intermediate latent ``H_i`` (``i < m``)
    against the layer-local fit ``||X - Z_1..Z_i H_i||``."""
    if not 1 <= i < stack.depth:
        raise ShapeMismatch(f"intermediate layer {i} out of range 1..{stack.depth - 1}")
    psi = stack.psi(i)
    return multiplicative_update(stack.H[i - 1], psi.T @ X, psi.T @ psi)


def update_consensus(stacks, indicators, n_samples=None, global_ids=()):
    """Closed-form minimizer of ``sum_v ||H_m^v - H G_v||^2`` over ``H``.

    With ``indicators=None`` every view is taken as complete and aligned, and
    the result is the plain average of the views' deepest latents.
    """
    if indicators is None:
        H = sum(st.Hm for st in stacks) / len(stacks)
        return ConsensusEmbedding(H, tuple(global_ids))
    if n_samples is None:
        n_samples = indicators[0].shape[0]
    d = stacks[0].Hm.shape[0]
    acc = np.zeros((d, n_samples))
    counts = np.zeros(n_samples)
    for st, G in zip(stacks, indicators):
        E = G.entries
        if E.shape != (n_samples, st.Hm.shape[1]):
            raise ShapeMismatch(f"indicator shape {E.shape} does not match "
                                f"({n_samples}, {st.Hm.shape[1]})")
        acc += st.Hm @ E.T
        # G G' is diagonal for a valid selector; only its diagonal is needed
        counts += E.sum(axis=1)
    if np.any(counts == 0):
        raise SingularNormalMatrix(
            f"{int(np.sum(counts == 0))} sample(s) are covered by no view")
    return ConsensusEmbedding(acc / counts, tuple(global_ids))


def _resolve_indicators(dataset, use_indicators):
    if use_indicators:
        return dataset.indicators()
    if not dataset.is_complete():
        raise ShapeMismatch("the identity path needs complete, identically ordered views")
    return None


def _check_rank(name, rows, cols, d):
    if d > min(rows, cols):
        raise RankTooLarge(f"{name} ({rows} x {cols}) cannot support a first layer "
                           f"of size {d}")


def init_stacks(dataset, config):
    """Layer-wise pretrained factors for every view.

    ``pretrain="joint"`` fits all views with shared latents (absent samples
    simply do not contribute) so every view starts in the same latent
    coordinates. ``"per_view"`` pretrains
    each view on its own.
    """
    d1 = config.layer_sizes[0]
    if config.pretrain == "per_view":
        stacks = []
        for v in dataset.views:
            _check_rank(f"view {v.name!r}", v.n_features, v.n_samples, d1)
            stacks.append(pretrain_stack(v.matrix, config.layer_sizes, seed=config.seed,
                                         max_iters=config.pretrain_iters, view_name=v.name))
        return stacks

    _check_rank("stacked views", sum(v.n_features for v in dataset.views),
                dataset.n_samples, d1)
    return pretrain_shared([v.matrix for v in dataset.views],
                           [G.positions for G in dataset.indicators()],
                           dataset.n_samples, config.layer_sizes, seed=config.seed,
                           max_iters=config.pretrain_iters, view_names=dataset.view_names)

def init_consensus(stacks, indicators, dataset, config):
    if config.consensus_init == "random":
        rng = np.random.default_rng(config.seed)
        H = rng.uniform(0.0, 1.0, size=(config.layer_sizes[-1], dataset.n_samples))
        return ConsensusEmbedding(H, dataset.global_ids)
    return update_consensus(stacks, indicators, dataset.n_samples, dataset.global_ids)


def linear_sweep(stacks, emb, Xs, indicators, config):
    """One full block-coordinate cycle; mutates ``stacks`` in place and
    returns the new consensus."""
    inds = indicators if indicators is not None else [None] * len(Xs)
    for st, X, G in zip(stacks, Xs, inds):
        m = st.depth
        for i in range(1, m + 1):
            st.Z[i - 1] = update_Z(st, i, X)
            if i < m:
                st.H[i - 1] = update_Hi(st, i, X)
        st.H[-1] = update_Hm(st, emb, G, config, X)
    return update_consensus(stacks, indicators, emb.H.shape[1], emb.global_ids)


def fit_linear(dataset, config=None, use_indicators=True, stacks=None):
    """Pretrain, then alternate Z / H_i / H_m / consensus updates.

    Returns a :class:`FitResult`; ``loss_trace[0]`` is the objective at the
    initial point and each further entry follows one full cycle.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    indicators = _resolve_indicators(dataset, use_indicators)
    Xs = _view_matrices(dataset)
    if stacks is None:
        stacks = init_stacks(dataset, config)
    else:
        stacks = [st.copy() for st in stacks]
    emb = init_consensus(stacks, indicators, dataset, config)

    trace = [linear_loss(stacks, emb, Xs, indicators, config)]
    converged = False
    for _ in range(config.max_iters):
        emb = linear_sweep(stacks, emb, Xs, indicators, config)
        trace.append(linear_loss(stacks, emb, Xs, indicators, config))
        prev, cur = trace[-2], trace[-1]
        if prev == 0.0 or abs(prev - cur) / prev < config.tol:
            converged = True
            break
    info = {"iterations": len(trace) - 1, "converged": converged,
            "seconds": time.perf_counter() - t0}
    return FitResult(stacks, emb, trace, info)
