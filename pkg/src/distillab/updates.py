"""Ingredients of the one-step update operator: preconditioners applied to
mean gradients, and per-sample data augmentations.

A preconditioner has two faces. The dynamic face (apply_update) is what
training uses; for diag_adaptive it threads an explicit running second
moment as optimizer state. The field face (field_apply) is a stateless
linear map used wherever a single operator must act on a *difference* of
mean gradients (discrepancy fields, Lipschitz estimation); for
diag_adaptive it is the fresh-state diagonal (1/eps) * I, the exact upper
envelope of any reachable adaptive diagonal, so norm_bound() is a true
operator-norm bound in every case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Identity",
    "Scaled",
    "DiagAdaptive",
    "NoAugment",
    "GaussianNoise",
    "CoordFlip",
    "Preconditioner",
    "Augmentation",
    "apply_update",
    "field_apply",
    "norm_bound",
    "state_diagonal",
    "augment_features",
]


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Scaled:
    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("scaled preconditioner needs c > 0")


@dataclass(frozen=True)
class DiagAdaptive:
    beta: float = 0.9
    eps: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("beta must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")


Preconditioner = Union[Identity, Scaled, DiagAdaptive]


@dataclass(frozen=True)
class NoAugment:
    pass


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float


@dataclass(frozen=True)
class CoordFlip:
    prob: float


Augmentation = Union[NoAugment, GaussianNoise, CoordFlip]


def apply_update(precond: Preconditioner, state, gbar: np.ndarray):
    """Preconditioned update direction and the successor optimizer state.

    For diag_adaptive, state is the running second moment v (None means
    fresh); v' = beta*v + (1-beta)*gbar^2 and the direction is
    gbar / (sqrt(v') + eps). Identity and scaled carry no state.
    """
    if isinstance(precond, Identity):
        return gbar, state
    if isinstance(precond, Scaled):
        return precond.c * gbar, state
    v = np.zeros_like(gbar) if state is None else state
    v = precond.beta * v + (1.0 - precond.beta) * gbar * gbar
    return gbar / (np.sqrt(v) + precond.eps), v


def field_apply(precond: Preconditioner, vec: np.ndarray) -> np.ndarray:
    """Stateless application of the preconditioner to a field vector."""
    if isinstance(precond, Identity):
        return vec
    if isinstance(precond, Scaled):
        return precond.c * vec
    return vec / precond.eps


def norm_bound(precond: Preconditioner) -> float:
    """Exact operator-norm bound over every reachable preconditioner state."""
    if isinstance(precond, Identity):
        return 1.0
    if isinstance(precond, Scaled):
        return precond.c
    return 1.0 / precond.eps


def state_diagonal(precond: Preconditioner, state, param_dim: int) -> np.ndarray:
    """Diagonal of the preconditioner at the given optimizer state."""
    if isinstance(precond, Identity):
        return np.ones(param_dim)
    if isinstance(precond, Scaled):
        return np.full(param_dim, precond.c)
    v = np.zeros(param_dim) if state is None else state
    return 1.0 / (np.sqrt(v) + precond.eps)


def augment_features(aug: Augmentation, features: np.ndarray, gen) -> np.ndarray:
    """Per-sample stochastic augmentation of a feature block.

    gaussian_noise adds sigma * N(0, I); coord_flip flips each coordinate's
    sign independently with the given probability. none returns the input
    unchanged (no draws consumed).
    """
    if isinstance(aug, NoAugment):
        return features
    if gen is None:
        raise ValueError("stochastic augmentation needs a generator")
    if isinstance(aug, GaussianNoise):
        return features + aug.sigma * gen.standard_normal(features.shape)
    flips = gen.random(features.shape) < aug.prob
    return np.where(flips, -features, features)
