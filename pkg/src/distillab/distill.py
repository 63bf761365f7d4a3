"""Outer-loop distillation driver.

One engine runs all four objectives: initialize atoms, rebuild the matching
context each outer iteration (fresh anchors, slices, or schedules from the
iteration's stream fork), take one gradient step on the atoms, and record
the objective value. The trace gets a contraction fit attached so callers
can read off the empirical rate and floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .configspace import Configuration
from .errors import InsufficientClassPoints, NonFiniteGradient
from .measures import WeightedDataset
from .numkit import RngStream
from .surrogates import (
    OBJECTIVES,
    SurrogateTrace,
    SyntheticSet,
    build_context,
    context_objective,
    fit_contraction,
    median_heuristic_sigma,
    outer_step,
)

__all__ = ["DistillRun", "init_synthetic", "distill"]

INIT_MODES = ("real_subsample", "gaussian")


@dataclass(frozen=True)
class DistillRun:
    method: str
    source_config: Configuration
    ipc: int
    outer_iters: int
    outer_lr: float
    result: SyntheticSet
    trace: SurrogateTrace


def init_synthetic(
    mu_tau: WeightedDataset, ipc: int, mode: str, rng: RngStream
) -> SyntheticSet:
    """Balanced initial atoms: ipc per class, subsampled or Gaussian.

    real_subsample draws ipc distinct points from each class;
    gaussian draws N(class mean, s^2 I) with s the class's mean per-feature
    standard deviation.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}")
    if ipc < 1:
        raise ValueError("ipc must be >= 1")
    gen = rng.generator()
    chunks = []
    labels = []
    for c in range(mu_tau.num_classes):
        idx = mu_tau.class_indices(c)
        if mode == "real_subsample":
            if idx.size < ipc:
                raise InsufficientClassPoints(
                    f"class {c} has {idx.size} points, need {ipc}"
                )
            picks = np.sort(gen.choice(idx, size=ipc, replace=False))
            chunks.append(mu_tau.features[picks])
        else:
            pts = mu_tau.features[idx]
            if pts.shape[0] == 0:
                raise InsufficientClassPoints(f"class {c} is empty")
            center = pts.mean(axis=0)
            scale = float(np.mean(pts.std(axis=0))) if pts.shape[0] > 1 else 1.0
            chunks.append(center + scale * gen.standard_normal((ipc, mu_tau.dim)))
        labels.append(np.full(ipc, c, dtype=np.int64))
    return SyntheticSet(
        np.concatenate(chunks, axis=0),
        np.concatenate(labels),
        mu_tau.num_classes,
    )


def distill(
    mu_tau: WeightedDataset,
    method: str,
    source_config: Configuration,
    ipc: int,
    J: int,
    outer_lr: float,
    rng: RngStream,
    *,
    init_mode: str = "real_subsample",
    sigma: Optional[float] = None,
    class_conditional: bool = False,
    n_projections: int = 64,
    gm_anchors: int = 5,
    gm_anchor_steps: int = 20,
    tm_unroll: int = 5,
    tm_omega=None,
    grad_mode: Optional[str] = None,
) -> DistillRun:
    """Distill mu_tau into ipc-per-class atoms by J outer steps on `method`.

    The context is rebuilt from fork(f"outer{j}") every iteration, so
    stochastic ingredients (anchors, projections, schedules) resample each
    step while a rerun with the same stream reproduces them bit for bit.
    The trace holds J+1 values: the objective before each step and a final
    evaluation under a fresh context. A non-finite gradient aborts with the
    partial trace attached to the exception.
    """
    if method not in OBJECTIVES:
        raise ValueError(f"unknown method {method!r}")
    if J < 1:
        raise ValueError("J must be >= 1")
    if outer_lr < 0:
        raise ValueError("outer_lr must be >= 0")

    xi = init_synthetic(mu_tau, ipc, init_mode, rng.fork("init"))
    if sigma is None:
        sigma = median_heuristic_sigma(mu_tau)

    kwargs = dict(
        sigma=sigma,
        class_conditional=class_conditional,
        n_projections=n_projections,
        gm_anchors=gm_anchors,
        gm_anchor_steps=gm_anchor_steps,
        tm_unroll=tm_unroll,
        tm_omega=tm_omega,
    )
    values = []
    for j in range(J):
        ctx = build_context(method, mu_tau, source_config, rng.fork(f"outer{j}"), **kwargs)
        try:
            xi, value = outer_step(xi, method, ctx, outer_lr, grad_mode=grad_mode)
        except NonFiniteGradient as exc:
            exc.partial_trace = tuple(values)
            raise
        values.append(value)
    final_ctx = build_context(method, mu_tau, source_config, rng.fork(f"outer{J}"), **kwargs)
    values.append(context_objective(xi, final_ctx))

    alpha_hat, floor_hat = (
        fit_contraction(values) if len(values) >= 3 else (0.0, values[-1])
    )
    trace = SurrogateTrace(tuple(values), alpha_hat, floor_hat)
    return DistillRun(method, source_config, ipc, J, outer_lr, xi, trace)
