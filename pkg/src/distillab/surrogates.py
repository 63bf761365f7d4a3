"""Outer matching objectives and the machinery that descends them.

Three surrogate families compare a synthetic measure against the real one:
distribution matching (RBF MMD, or sliced 1-Wasserstein), gradient matching
(mean-gradient gaps at anchor parameters, plain gradients), and trajectory
matching (weighted gap along two short training runs sharing init and batch
schedule). outer_step performs one gradient-descent update of the synthetic
atoms against any of them; fit_contraction summarizes a trace of objective
values by the affine recursion v' = (1-alpha) v + floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import models
from .configspace import Configuration, Trajectory, train
from .errors import BadShape, DegenerateFit, DimMismatch, MissingClass, NonFiniteGradient
from .measures import WeightedDataset, from_arrays
from .numkit import RngStream, ols_fit

__all__ = [
    "SyntheticSet",
    "SurrogateTrace",
    "mmd",
    "mmd_grad_atoms",
    "sliced_w1",
    "gm_objective",
    "tm_objective",
    "outer_step",
    "fit_contraction",
    "median_heuristic_sigma",
    "build_context",
    "context_objective",
    "DmMmdContext",
    "DmSw1Context",
    "GmContext",
    "TmContext",
]


@dataclass(frozen=True)
class SyntheticSet:
    """A distilled dataset: optimizable atoms with fixed balanced labels."""

    atoms: np.ndarray  # (k, dim)
    labels: np.ndarray  # (k,)
    num_classes: int

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        labels = np.array(self.labels, dtype=np.int64)
        if atoms.ndim != 2 or atoms.shape[0] != labels.shape[0]:
            raise BadShape("atoms must be (k, dim) aligned with labels")
        if not np.all(np.isfinite(atoms)):
            raise BadShape("atoms must be finite")
        counts = np.bincount(labels, minlength=self.num_classes)
        if counts.min() != counts.max():
            raise BadShape("labels must be balanced (ipc per class)")
        atoms.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "labels", labels)

    @property
    def k(self) -> int:
        return self.atoms.shape[0]

    @property
    def ipc(self) -> int:
        return self.k // self.num_classes

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.k, 1.0 / self.k)

    def to_dataset(self) -> WeightedDataset:
        return WeightedDataset(self.atoms, self.labels, self.weights, self.num_classes)

    def with_atoms(self, atoms: np.ndarray) -> "SyntheticSet":
        return SyntheticSet(atoms, self.labels, self.num_classes)


Measure = Union[SyntheticSet, WeightedDataset]


def as_dataset(m: Measure) -> WeightedDataset:
    return m.to_dataset() if isinstance(m, SyntheticSet) else m


@dataclass(frozen=True)
class SurrogateTrace:
    """Objective values per outer iteration plus the fitted recursion."""

    values: tuple[float, ...]
    alpha_hat: float
    floor_hat: float


def _rbf(block_sq: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-block_sq / (2.0 * sigma * sigma))


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xx = (x * x).sum(axis=1)
    yy = (y * y).sum(axis=1)
    sq = xx[:, None] + yy[None, :] - 2.0 * (x @ y.T)
    return np.maximum(sq, 0.0)


def _mmd_plain(x, wx, y, wy, sigma: float) -> float:
    kxx = _rbf(_sq_dists(x, x), sigma)
    kyy = _rbf(_sq_dists(y, y), sigma)
    kxy = _rbf(_sq_dists(x, y), sigma)
    rad = float(wx @ kxx @ wx - 2.0 * (wx @ kxy @ wy) + wy @ kyy @ wy)
    return float(np.sqrt(max(rad, 0.0)))


def mmd(source: Measure, target: Measure, sigma: float, class_conditional: bool = False) -> float:
    """RBF maximum mean discrepancy between two weighted measures.

    Biased (V-statistic) form with kernel exp(-||x-y||^2 / (2 sigma^2));
    tiny negative radicands from round-off are clamped to 0. In
    class-conditional mode the per-class MMDs (within-class weights
    renormalized) are averaged with weights (mass_s(c) + mass_t(c)) / 2,
    which keeps the value symmetric.
    """
    if sigma <= 0:
        raise BadShape("sigma must be > 0")
    s = as_dataset(source)
    t = as_dataset(target)
    if s.dim != t.dim:
        raise DimMismatch("measures have different feature dims")
    if not class_conditional:
        return _mmd_plain(s.features, s.weights, t.features, t.weights, sigma)
    num_classes = max(s.num_classes, t.num_classes)
    total = 0.0
    for c in range(num_classes):
        si = s.class_indices(c)
        ti = t.class_indices(c)
        if si.size == 0 or ti.size == 0:
            raise MissingClass(f"class {c} missing from one measure")
        ws = s.weights[si]
        wt = t.weights[ti]
        share = 0.5 * (ws.sum() + wt.sum())
        total += share * _mmd_plain(
            s.features[si], ws / ws.sum(), t.features[ti], wt / wt.sum(), sigma
        )
    return float(total)


def mmd_grad_atoms(xi: SyntheticSet, target: Measure, sigma: float) -> np.ndarray:
    """Analytic gradient of the squared (plain) MMD with respect to each atom.

    Returns a (k, dim) array. The gradient of the MMD itself follows by the
    chain rule grad/(2*mmd), with the convention that it is the zero vector
    at MMD = 0 (used by outer_step).
    """
    if sigma <= 0:
        raise BadShape("sigma must be > 0")
    t = as_dataset(target)
    x = xi.atoms
    wx = xi.weights
    y = t.features
    wy = t.weights
    inv = 1.0 / (sigma * sigma)
    kxx = _rbf(_sq_dists(x, x), sigma)
    kxy = _rbf(_sq_dists(x, y), sigma)
    # d/dx_a ||.||^2-kernel sums: each K(x_a, u) contributes K * (u - x_a)/sigma^2.
    ax = (wx[None, :] * kxx) @ x - ((wx[None, :] * kxx).sum(axis=1))[:, None] * x
    ay = (wy[None, :] * kxy) @ y - ((wy[None, :] * kxy).sum(axis=1))[:, None] * x
    return (2.0 * wx)[:, None] * inv * (ax - ay)


def _class_mmd_value_and_grad(xi: SyntheticSet, target: WeightedDataset, sigma: float, class_conditional: bool):
    # Value of the (possibly class-conditional) MMD and its gradient wrt
    # atoms, via the per-class chain rule. Shared by outer_step.
    if not class_conditional:
        value = mmd(xi, target, sigma)
        if value == 0.0:
            return 0.0, np.zeros_like(xi.atoms)
        return value, mmd_grad_atoms(xi, target, sigma) / (2.0 * value)
    grad = np.zeros_like(xi.atoms)
    total = 0.0
    for c in range(xi.num_classes):
        si = np.nonzero(xi.labels == c)[0]
        ti = target.class_indices(c)
        if si.size == 0 or ti.size == 0:
            raise MissingClass(f"class {c} missing from one measure")
        ws = xi.weights[si]
        wt = target.weights[ti]
        share = 0.5 * (ws.sum() + wt.sum())
        sub = SyntheticSet(xi.atoms[si], np.zeros(si.size, dtype=np.int64), 1)
        subt = from_arrays(target.features[ti], np.zeros(ti.size, dtype=np.int64), 1, wt / wt.sum())
        value = mmd(sub, subt, sigma)
        total += share * value
        if value > 0.0:
            grad[si] = share * mmd_grad_atoms(sub, subt, sigma) / (2.0 * value)
    return float(total), grad


def _exact_w1_1d(x: np.ndarray, wx: np.ndarray, y: np.ndarray, wy: np.ndarray) -> float:
    # Integral over quantile levels of |F_x^{-1} - F_y^{-1}| for discrete
    # weighted samples.
    ix = np.argsort(x, kind="stable")
    iy = np.argsort(y, kind="stable")
    xs, ws = x[ix], wx[ix]
    ys, vs = y[iy], wy[iy]
    cx = np.cumsum(ws)
    cy = np.cumsum(vs)
    cx[-1] = cy[-1] = 1.0
    bounds = np.unique(np.concatenate([[0.0], cx, cy]))
    total = 0.0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            continue
        mid = 0.5 * (lo + hi)
        qi = int(np.searchsorted(cx, mid, side="left"))
        qj = int(np.searchsorted(cy, mid, side="left"))
        total += (hi - lo) * abs(xs[qi] - ys[qj])
    return float(total)


def sliced_w1(source: Measure, target: Measure, n_projections: int, rng: RngStream) -> float:
    """Sliced 1-Wasserstein distance between the feature marginals.

    Mean over random unit directions of the exact 1-D W1 of the projected
    weighted samples. Exact (not approximate) in dimension 1. Deterministic
    given the rng stream.
    """
    if n_projections < 1:
        raise BadShape("n_projections must be >= 1")
    s = as_dataset(source)
    t = as_dataset(target)
    if s.dim != t.dim:
        raise DimMismatch("measures have different feature dims")
    gen = rng.generator()
    dirs = gen.standard_normal((n_projections, s.dim))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    dirs /= norms
    return _sw1_fixed_directions(s, t, dirs)


def _sw1_fixed_directions(s: WeightedDataset, t: WeightedDataset, dirs: np.ndarray) -> float:
    vals = [
        _exact_w1_1d(s.features @ u, s.weights, t.features @ u, t.weights) for u in dirs
    ]
    return float(np.mean(vals))


def gm_objective(xi: Measure, target: Measure, cfg: Configuration, anchors) -> float:
    """Mean over anchor parameters of the mean-gradient gap norm.

    Gradients are plain (no preconditioner): scale constants are attached
    by the bridge bounds, not here.
    """
    anchors = list(anchors)
    if not anchors:
        raise BadShape("anchors must be nonempty")
    s = as_dataset(xi)
    t = as_dataset(target)
    spec = cfg.model
    gaps = [
        float(
            np.linalg.norm(
                models.dataset_mean_grad(spec, theta, s)
                - models.dataset_mean_grad(spec, theta, t)
            )
        )
        for theta in anchors
    ]
    return float(np.mean(gaps))


def tm_objective(
    xi: Measure,
    target: Measure,
    cfg: Configuration,
    theta0: np.ndarray,
    L: int,
    omega,
    schedule_rng: RngStream,
    real_traj: Optional[Trajectory] = None,
) -> float:
    """Weighted parameter-path gap between two L-step runs sharing init and
    batch schedule stream (one trained on the synthetic measure, one on the
    target). The t=0 term vanishes by the shared init."""
    if L < 1:
        raise BadShape("L must be >= 1")
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (L + 1,) or np.any(omega <= 0):
        raise BadShape("omega must have length L+1 with positive entries")
    syn_traj = train(cfg, as_dataset(xi), theta0, L, schedule_rng)
    if real_traj is None:
        real_traj = train(cfg, as_dataset(target), theta0, L, schedule_rng)
    gaps = np.linalg.norm(syn_traj.params - real_traj.params, axis=1)
    return float(np.dot(omega, gaps))


@dataclass(frozen=True)
class DmMmdContext:
    target: WeightedDataset
    sigma: float
    class_conditional: bool = False


@dataclass(frozen=True)
class DmSw1Context:
    target: WeightedDataset
    directions: np.ndarray  # frozen unit rows, one per projection


@dataclass(frozen=True)
class GmContext:
    target: WeightedDataset
    cfg: Configuration
    anchors: tuple
    # Mean target gradients per anchor; they do not depend on the atoms, so
    # finite-difference probes reuse them.
    target_grads: tuple = ()


@dataclass(frozen=True)
class TmContext:
    target: WeightedDataset
    cfg: Configuration
    theta0: np.ndarray
    L: int
    omega: np.ndarray
    schedule_rng: RngStream
    real_traj: Trajectory


OBJECTIVES = ("dm_mmd", "dm_sw1", "gm", "tm")


def build_context(
    method: str,
    target: WeightedDataset,
    cfg: Configuration,
    rng: RngStream,
    *,
    sigma: float = 1.0,
    class_conditional: bool = False,
    n_projections: int = 64,
    gm_anchors: int = 5,
    gm_anchor_steps: int = 20,
    tm_unroll: int = 5,
    tm_omega=None,
):
    """Fresh per-outer-iteration context for one surrogate objective.

    gm: anchors are checkpoints evenly spaced along a fresh real-data
    trajectory from a fresh init. tm: fresh shared init and schedule
    stream; the real-side trajectory is trained once and cached in the
    context (it does not depend on the atoms). dm_sw1: projection
    directions are frozen per iteration so finite differences see a fixed
    objective.
    """
    if method == "dm_mmd":
        return DmMmdContext(target, sigma, class_conditional)
    if method == "dm_sw1":
        gen = rng.fork("dirs").generator()
        dirs = gen.standard_normal((n_projections, target.dim))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return DmSw1Context(target, dirs / norms)
    if method == "gm":
        theta0 = models.init_params(cfg.model, rng.fork(cfg.init_seed_label))
        traj = train(cfg, target, theta0, gm_anchor_steps, rng.fork("schedule"))
        picks = np.unique(np.round(np.linspace(0, gm_anchor_steps, gm_anchors)).astype(int))
        anchors = tuple(traj.params[i] for i in picks)
        target_grads = tuple(
            models.dataset_mean_grad(cfg.model, theta, target) for theta in anchors
        )
        return GmContext(target, cfg, anchors, target_grads)
    if method == "tm":
        theta0 = models.init_params(cfg.model, rng.fork(cfg.init_seed_label))
        omega = np.ones(tm_unroll + 1) if tm_omega is None else np.asarray(tm_omega, float)
        schedule = rng.fork("schedule")
        real_traj = train(cfg, target, theta0, tm_unroll, schedule)
        return TmContext(target, cfg, theta0, tm_unroll, omega, schedule, real_traj)
    raise BadShape(f"unknown objective {method!r}")


def context_objective(xi: SyntheticSet, context) -> float:
    """Objective value of a synthetic set under a frozen context."""
    if isinstance(context, DmMmdContext):
        return mmd(xi, context.target, context.sigma, context.class_conditional)
    if isinstance(context, DmSw1Context):
        return _sw1_fixed_directions(as_dataset(xi), context.target, context.directions)
    if isinstance(context, GmContext):
        if context.target_grads:
            s = as_dataset(xi)
            gaps = [
                float(
                    np.linalg.norm(
                        models.dataset_mean_grad(context.cfg.model, theta, s) - tg
                    )
                )
                for theta, tg in zip(context.anchors, context.target_grads)
            ]
            return float(np.mean(gaps))
        return gm_objective(xi, context.target, context.cfg, context.anchors)
    if isinstance(context, TmContext):
        return tm_objective(
            xi,
            context.target,
            context.cfg,
            context.theta0,
            context.L,
            context.omega,
            context.schedule_rng,
            real_traj=context.real_traj,
        )
    raise BadShape(f"unknown context {type(context).__name__}")


def _fd_atoms_grad(xi: SyntheticSet, context) -> np.ndarray:
    # Central differences per atom coordinate; the probe step scales with
    # each atom's own magnitude.
    base = xi.atoms
    grad = np.empty_like(base)
    for a in range(base.shape[0]):
        h = 1e-3 * (1.0 + float(np.max(np.abs(base[a]))))
        for c in range(base.shape[1]):
            up = base.copy()
            up[a, c] += h
            down = base.copy()
            down[a, c] -= h
            f_up = context_objective(xi.with_atoms(up), context)
            f_down = context_objective(xi.with_atoms(down), context)
            grad[a, c] = (f_up - f_down) / (2.0 * h)
    return grad


def outer_step(
    xi: SyntheticSet,
    objective: str,
    context,
    outer_lr: float,
    grad_mode: Optional[str] = None,
):
    """One gradient-descent update of the atoms (labels stay fixed).

    Returns (updated set, pre-step objective value). grad_mode "analytic"
    is available only for dm_mmd (closed-form RBF gradient with the
    chain-rule MMD convention); every objective supports "fd" (central
    differences under the frozen context). Default: analytic for dm_mmd,
    fd otherwise.
    """
    if objective not in OBJECTIVES:
        raise BadShape(f"unknown objective {objective!r}")
    expected = {
        "dm_mmd": DmMmdContext,
        "dm_sw1": DmSw1Context,
        "gm": GmContext,
        "tm": TmContext,
    }[objective]
    if not isinstance(context, expected):
        raise BadShape(f"{objective} needs a {expected.__name__}")
    if grad_mode is None:
        grad_mode = "analytic" if objective == "dm_mmd" else "fd"
    if grad_mode not in ("analytic", "fd"):
        raise BadShape(f"unknown grad_mode {grad_mode!r}")
    if grad_mode == "analytic" and objective != "dm_mmd":
        raise BadShape("analytic gradients exist only for dm_mmd")
    if outer_lr < 0:
        raise BadShape("outer_lr must be >= 0")
    if grad_mode == "analytic":
        value, grad = _class_mmd_value_and_grad(
            xi, context.target, context.sigma, context.class_conditional
        )
    else:
        value = context_objective(xi, context)
        grad = _fd_atoms_grad(xi, context)
    if not np.all(np.isfinite(grad)) or not np.isfinite(value):
        raise NonFiniteGradient("outer gradient is not finite")
    return xi.with_atoms(xi.atoms - outer_lr * grad), float(value)


def fit_contraction(trace_values):
    """Fit v_{j+1} = (1 - alpha) v_j + floor over consecutive trace pairs.

    Returns (alpha_hat, floor_hat); alpha_hat <= 0 signals non-contractive
    runs and is reported unclamped. A constant trace returns (0, value) by
    convention.
    """
    values = np.asarray(trace_values, dtype=float)
    if values.size < 3:
        raise DegenerateFit("need at least 3 trace values")
    if np.ptp(values) == 0.0:
        return 0.0, float(values[0])
    fit = ols_fit(values[:-1], values[1:])
    return float(1.0 - fit.slope), float(fit.intercept)


def median_heuristic_sigma(ds: WeightedDataset, cap: int = 1024, seed: int = 0) -> float:
    """Median pairwise feature distance (a standard RBF bandwidth choice).

    Subsamples deterministically above cap points to keep the pair count
    desk-scale. Falls back to 1.0 when the median vanishes.
    """
    x = ds.features
    if x.shape[0] > cap:
        gen = RngStream(seed, ("median-sigma",)).generator()
        x = x[np.sort(gen.choice(x.shape[0], cap, replace=False))]
    sq = _sq_dists(x, x)
    upper = sq[np.triu_indices(x.shape[0], k=1)]
    med = float(np.sqrt(np.median(upper)))
    return med if med > 0 else 1.0
