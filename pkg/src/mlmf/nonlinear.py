"""Nonlinear multi-layer factorization fit by projected gradient descent.

Each view is modelled as ``X_v ~ Z_1 f(Z_2 f(... f(Z_m H_m)))``; the first
layer stays linear. The intermediate ``H_i`` (``i < m``) are not free: they
are recomputed by the forward pass ``H_{i-1} = f(Z_i H_i)``. Sparsity and
consensus terms are the same as in the linear model.
"""

from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import NonFiniteGradient, ShapeMismatch, StepUnderflow
from .linear import (
    ConsensusEmbedding,
    FitResult,
    SolverConfig,
    _as_array,
    _check_shapes,
    _resolve_indicators,
    _view_matrices,
    fit_linear,
    init_stacks,
    select,
    sparsity_term,
    update_consensus,
)
from .seminmf import FactorStack

INIT_RCOND = 1e-2


class Activation(enum.Enum):
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    RELU = "relu"

    def __call__(self, A):
        if self is Activation.SIGMOID:
            return special.expit(A)
        if self is Activation.SOFTPLUS:
            return np.logaddexp(0.0, A)
        return np.maximum(A, 0.0)

    def derivative(self, A):
        if self is Activation.SIGMOID:
            s = special.expit(A)
            return s * (1.0 - s)
        if self is Activation.SOFTPLUS:
            return special.expit(A)
        # subgradient 0 at 0
        return (A > 0).astype(float)


def as_activation(value):
    if isinstance(value, Activation):
        return value
    try:
        return Activation(str(value).lower())
    except ValueError:
        names = [a.value for a in Activation]
        raise ValueError(f"unknown activation {value!r}; expected one of {names}") from None


@dataclass
class NonlinearSolverConfig(SolverConfig):
    max_iters: int = 300
    activation: Activation = Activation.SIGMOID
    alpha0: float = 1e-2
    beta: float = 0.5
    min_step: float = 1e-10
    warm_start: str = "linear"  # or "pretrained"
    warm_start_iters: int = 20

    def __post_init__(self):
        super().__post_init__()
        self.activation = as_activation(self.activation)
        if self.warm_start not in ("linear", "pretrained"):
            raise ValueError(f"unknown warm_start {self.warm_start!r}")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.min_step > 0:
            raise ValueError("min_step must be positive")

    def to_dict(self):
        d = super().to_dict()
        d["activation"] = self.activation.value
        return d


@dataclass
class Gradients:
    """Partial derivatives of the loss: ``Z[v][i]``, ``Hm[v]`` and ``H``."""

    Z: list
    Hm: list
    H: np.ndarray

    def sq_norm(self):
        total = float(np.sum(self.H ** 2))
        for zs, hm in zip(self.Z, self.Hm):
            total += float(np.sum(hm ** 2)) + sum(float(np.sum(z ** 2)) for z in zs)
        return total


def forward(stack, activation):
    """Run the nested model for one view.

    Returns ``(H, pre)``: ``H[i]`` is layer ``i + 1``'s representation
    (``H[-1]`` is ``H_m`` itself) and ``pre[i]`` the pre-activation
    ``Z_{i+2} H_{i+2}`` that produced ``H[i]`` (``None`` for the last).
    """
    f = as_activation(activation)
    m = stack.depth
    H = [None] * m
    pre = [None] * m
    H[-1] = stack.Hm
    for i in range(m - 1, 0, -1):
        # H_i = f(Z_{i+1} H_{i+1}), 0-based: H[i-1] = f(Z[i] @ H[i])
        A = stack.Z[i] @ H[i]
        pre[i - 1] = A
        H[i - 1] = f(A)
    return H, pre


def reconstruct(stack, activation):
    H, _ = forward(stack, activation)
    return stack.Z[0] @ H[0]


def nonlinear_loss(stacks, H, dataset, indicators, config):
    """Reconstruction through the nested activations plus the sparsity and
    consensus terms, summed over views."""
    Hc = _as_array(H)
    Xs = _view_matrices(dataset)
    inds = indicators if indicators is not None else [None] * len(Xs)
    if not len(stacks) == len(Xs) == len(inds):
        raise ShapeMismatch("stacks, views and indicators differ in number")
    total = 0.0
    for st, X, G in zip(stacks, Xs, inds):
        _check_shapes(st, X, Hc, G)
        total += float(np.sum((X - reconstruct(st, config.activation)) ** 2))
        total += config.lambda1 * sparsity_term(st.Hm)
        total += config.lambda2 * float(np.sum((st.Hm - select(Hc, G)) ** 2))
    return total


def gradients(stacks, H, dataset, indicators, config):
    """Reverse-mode gradients of :func:`nonlinear_loss`."""
    f = as_activation(config.activation)
    Hc = _as_array(H)
    Xs = _view_matrices(dataset)
    inds = indicators if indicators is not None else [None] * len(Xs)
    gZ, gHm = [], []
    gH = np.zeros_like(Hc)
    for st, X, G in zip(stacks, Xs, inds):
        _check_shapes(st, X, Hc, G)
        Hs, pre = forward(st, f)
        m = st.depth
        dZ = [None] * m
        R = 2.0 * (st.Z[0] @ Hs[0] - X)
        dZ[0] = R @ Hs[0].T
        dH = st.Z[0].T @ R
        for i in range(1, m):
            dA = dH * f.derivative(pre[i - 1])
            dZ[i] = dA @ Hs[i].T
            dH = st.Z[i].T @ dA
        diff = st.Hm - select(Hc, G)
        colsum = st.Hm.sum(axis=0, keepdims=True)
        dH = dH + 2.0 * config.lambda1 * np.repeat(colsum, st.Hm.shape[0], axis=0)
        dH = dH + 2.0 * config.lambda2 * diff
        gH -= 2.0 * config.lambda2 * (diff if G is None else diff @ G.entries.T)
        gZ.append(dZ)
        gHm.append(dH)
    grads = Gradients(gZ, gHm, gH)
    if not np.isfinite(grads.sq_norm()):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    return grads


def _refresh(stack, activation):
    """Store the forward-pass representations in ``stack.H``."""
    stack.H = forward(stack, activation)[0]
    return stack


def adapt_stacks(stacks, Xs, activation):
    """Turn linearly pretrained stacks into a starting point for the nested
    model.

    The nonlinear model is not scale invariant, and one shared step size
    needs comparable curvature across blocks. All ``H_m`` are divided by
    their common RMS (``Z_m`` absorbs the factor, so views stay aligned),
    each ``Z_i`` (``i >= 2``) is rescaled to give its pre-activation unit
    standard deviation, and ``Z_1`` is refit by truncated least squares to
    the resulting ``H_1``.
    """
    f = as_activation(activation)
    rms = float(np.sqrt(np.mean(np.concatenate([st.Hm.ravel() ** 2 for st in stacks]))))
    out = []
    for st, X in zip(stacks, Xs):
        st = st.copy()
        m = st.depth
        if rms > 0:
            st.H[-1] = st.Hm / rms
            st.Z[-1] = st.Z[-1] * rms
        rep = st.Hm
        for i in range(m - 1, 0, -1):
            A = st.Z[i] @ rep
            sd = float(A.std())
            if sd > 0:
                st.Z[i] = st.Z[i] / sd
            rep = f(st.Z[i] @ rep)
        # H_1 is nearly rank deficient when d_1 > d_2; an exact fit would
        # give Z_1 huge entries and make the problem badly conditioned
        st.Z[0] = X @ np.linalg.pinv(rep, rcond=INIT_RCOND)
        out.append(_refresh(st, f))
    return out


def initial_stacks(dataset, config, use_indicators=True):
    """Layer-wise pretraining, optionally followed by ``warm_start_iters``
    cycles of the linear solver."""
    if config.warm_start == "pretrained":
        return init_stacks(dataset, config)
    linear = SolverConfig(**{k: getattr(config, k) for k in SolverConfig.__dataclass_fields__})
    linear.max_iters = config.warm_start_iters
    return fit_linear(dataset, linear, use_indicators=use_indicators).stacks


def _step(stacks, H, grads, alpha):
    new = []
    for st, dZ, dHm in zip(stacks, grads.Z, grads.Hm):
        Z = [z - alpha * g for z, g in zip(st.Z, dZ)]
        Hm = np.maximum(st.Hm - alpha * dHm, 0.0)
        new.append(FactorStack(st.view_name, Z, st.H[:-1] + [Hm]))
    return new, H - alpha * grads.H


def fit_nonlinear(dataset, config=None, use_indicators=True, stacks=None):
    """Projected gradient descent on all parameters with one shared step.

    The starting point comes from :func:`initial_stacks` passed through
    :func:`adapt_stacks`. The step starts at ``alpha0`` and is multiplied by ``beta`` until the
    loss strictly decreases; after an accepted step it grows by ``1/beta``.
    If it falls below ``min_step`` a :class:`StepUnderflow` warning is
    issued and the best point so far is returned.
    """
    config = config or NonlinearSolverConfig()
    if not isinstance(config, NonlinearSolverConfig):
        config = NonlinearSolverConfig(**{k: getattr(config, k) for k in config.__dataclass_fields__})
    f = config.activation
    t0 = time.perf_counter()
    indicators = _resolve_indicators(dataset, use_indicators)
    Xs = _view_matrices(dataset)
    if stacks is None:
        stacks = adapt_stacks(initial_stacks(dataset, config, use_indicators), Xs, f)
    else:
        stacks = [_refresh(st.copy(), f) for st in stacks]
    if config.consensus_init == "random":
        rng = np.random.default_rng(config.seed)
        H = rng.uniform(0.0, 1.0, size=(config.layer_sizes[-1], dataset.n_samples))
    else:
        H = update_consensus(stacks, indicators, dataset.n_samples).H

    loss = nonlinear_loss(stacks, H, Xs, indicators, config)
    trace = [loss]
    alpha = config.alpha0
    converged = underflow = False
    iters = 0
    while iters < config.max_iters:
        grads = gradients(stacks, H, Xs, indicators, config)
        if grads.sq_norm() == 0.0:
            converged = True
            break
        while True:
            cand, cand_H = _step(stacks, H, grads, alpha)
            with np.errstate(over="ignore", invalid="ignore"):
                new = nonlinear_loss(cand, cand_H, Xs, indicators, config)
            if np.isfinite(new) and new < loss:
                break
            alpha *= config.beta
            if alpha < config.min_step:
                underflow = True
                break
        if underflow:
            warnings.warn(f"step size fell below {config.min_step:g} without descent; "
                          "returning the best point", StepUnderflow, stacklevel=2)
            break
        stacks = [_refresh(st, f) for st in cand]
        H = cand_H
        iters += 1
        prev, loss = loss, new
        trace.append(loss)
        alpha = alpha / config.beta
        if (prev - loss) / prev < config.tol:
            converged = True
            break
    info = {"iterations": iters, "converged": converged, "step_underflow": underflow,
            "seconds": time.perf_counter() - t0}
    return FitResult(stacks, ConsensusEmbedding(H, dataset.global_ids), trace, info)
