"""Training configurations and their induced dynamics.

A Configuration bundles a model, a preconditioner, a step size, an
augmentation, and a batch size. One training step moves parameters against
the preconditioned weighted-mean gradient of the (possibly augmented)
batch. On top of the dynamics this module provides the configuration
distance (update-field discrepancy between two configurations at shared
probes), a greedy metric cover with its coverage entropy, and empirical
contraction/preconditioner diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import models
from .errors import BadMatrix, BadShape, DimMismatch, ZeroGap
from .measures import WeightedDataset
from .models import ModelSpec
from .numkit import RngStream
from .updates import (
    Augmentation,
    DiagAdaptive,
    Identity,
    NoAugment,
    Preconditioner,
    Scaled,
    apply_update,
    augment_features,
    state_diagonal,
)

__all__ = [
    "FULL_BATCH",
    "Configuration",
    "Trajectory",
    "CoverReport",
    "DynamicsDiagnostics",
    "step",
    "train",
    "make_probes",
    "config_distance",
    "family_distance_matrix",
    "greedy_cover",
    "quantile_radius",
    "dynamics_diagnostics",
]

# Any batch_size >= the dataset size trains full-batch; this sentinel makes
# "always full batch" spellable without knowing n.
FULL_BATCH = 2**62

# Fixed internal stream for augmentation draws inside distance probes: the
# draws must be identical across configurations so d(a, a) = 0 exactly.
_PROBE_AUG_SEED = 0x0D15C0


@dataclass(frozen=True)
class Configuration:
    """One training setup; immutable and hashable by id."""

    id: str
    model: ModelSpec
    preconditioner: Preconditioner = field(default_factory=Identity)
    step_size: float = 0.1
    augmentation: Augmentation = field(default_factory=NoAugment)
    batch_size: int = FULL_BATCH
    init_seed_label: str = "init"

    def __post_init__(self):
        if self.step_size <= 0:
            raise BadShape("step_size must be > 0")
        if self.batch_size < 1:
            raise BadShape("batch_size must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    """Parameter iterates theta_0..theta_T of one training run."""

    params: np.ndarray  # (T+1, param_dim)
    config_id: str
    schedule_key: str

    def __post_init__(self):
        params = np.asarray(self.params, dtype=float)
        if params.ndim != 2 or params.shape[0] < 1:
            raise BadShape("params must be a (T+1, param_dim) array")
        object.__setattr__(self, "params", params)

    @property
    def steps(self) -> int:
        return self.params.shape[0] - 1

    def final(self) -> np.ndarray:
        return self.params[-1]


def step(cfg: Configuration, theta: np.ndarray, batch: WeightedDataset, opt_state=None, aug_gen=None):
    """One update: theta' = theta - eta * P(gbar), returned with the
    successor optimizer state.

    gbar is the weighted mean gradient of the batch after per-sample
    augmentation; stochastic augmentations require aug_gen. Identity and
    scaled preconditioners ignore opt_state; diag_adaptive threads its
    running second moment through it.
    """
    if len(batch) == 0:
        raise BadShape("batch must be nonempty")
    feats = augment_features(cfg.augmentation, batch.features, aug_gen)
    gbar = models.mean_grad(cfg.model, theta, feats, batch.labels, batch.weights)
    direction, new_state = apply_update(cfg.preconditioner, opt_state, gbar)
    return theta - cfg.step_size * direction, new_state


def train(
    cfg: Configuration,
    ds: WeightedDataset,
    theta0: np.ndarray,
    T: int,
    schedule_rng: RngStream,
) -> Trajectory:
    """T steps of mini-batch training; returns all iterates.

    Batches are drawn without replacement per epoch from a permutation
    stream that is a pure function of schedule_rng, so two datasets of equal
    size train under literally identical batch index schedules. A batch
    size >= len(ds) short-circuits to full-batch (no schedule draws).
    """
    if T < 0:
        raise BadShape("T must be >= 0")
    n = len(ds)
    bs = min(cfg.batch_size, n)
    full = bs >= n
    sched_gen = None if full else schedule_rng.fork("batches").generator()
    aug_gen = (
        None
        if isinstance(cfg.augmentation, NoAugment)
        else schedule_rng.fork("augment").generator()
    )
    params = np.empty((T + 1, cfg.model.param_dim))
    params[0] = theta0
    theta = np.asarray(theta0, dtype=float)
    state = None
    order = None
    cursor = 0
    for t in range(T):
        if full:
            batch = ds
        else:
            if order is None or cursor + bs > n:
                order = sched_gen.permutation(n)
                cursor = 0
            batch = ds.subset(order[cursor : cursor + bs])
            cursor += bs
        theta, state = step(cfg, theta, batch, state, aug_gen)
        params[t + 1] = theta
    return Trajectory(params, cfg.id, schedule_rng.describe())


def make_probes(
    spec: ModelSpec,
    ds: WeightedDataset,
    rng: RngStream,
    n_inits: int = 8,
    n_batches: int = 4,
    batch_size: int = 32,
):
    """Shared (theta, batch) probe pairs for distance evaluation.

    n_inits draws from the model's init distribution crossed with n_batches
    fixed mini-batches; the same probe list must be reused across every
    configuration being compared.
    """
    thetas = [models.init_params(spec, rng.fork(f"theta{i}")) for i in range(n_inits)]
    gen = rng.fork("batches").generator()
    size = min(batch_size, len(ds))
    batches = [
        ds.subset(np.sort(gen.choice(len(ds), size=size, replace=False)))
        for _ in range(n_batches)
    ]
    return [(theta, batch) for theta in thetas for batch in batches]


def _one_step_field(cfg: Configuration, theta: np.ndarray, batch: WeightedDataset, probe_idx: int):
    # The realized preconditioned mean gradient at a probe: (theta-theta')/eta
    # from a fresh-state step. Augmentation draws come from a fixed stream
    # keyed only by the probe index, shared across configurations.
    aug_gen = (
        None
        if isinstance(cfg.augmentation, NoAugment)
        else RngStream(_PROBE_AUG_SEED, (f"probe{probe_idx}",)).generator()
    )
    theta1, _ = step(cfg, theta, batch, None, aug_gen)
    return (theta - theta1) / cfg.step_size


def _normalize(u: np.ndarray) -> np.ndarray:
    return u / (float(np.linalg.norm(u)) + 1e-12)


def config_distance(a: Configuration, b: Configuration, probes, mode: str = "mean_normalized") -> float:
    """Update-field discrepancy between two configurations at shared probes.

    sup_raw: max over probes of ||P_a gbar_a - P_b gbar_b||_2.
    mean_normalized: mean over probes of the distance between unit-normalized
    one-step displacements (scale-free). Symmetric; zero when a == b.
    """
    if not probes:
        raise BadShape("probes must be nonempty")
    if mode not in ("sup_raw", "mean_normalized"):
        raise BadShape(f"unknown mode {mode!r}")
    if (
        a.model.param_dim != b.model.param_dim
        or a.model.input_dim != b.model.input_dim
    ):
        raise DimMismatch("configurations do not share a parameter space")
    gaps = []
    for idx, (theta, batch) in enumerate(probes):
        ua = _one_step_field(a, theta, batch, idx)
        ub = _one_step_field(b, theta, batch, idx)
        if mode == "sup_raw":
            gaps.append(float(np.linalg.norm(ua - ub)))
        else:
            gaps.append(float(np.linalg.norm(_normalize(ua) - _normalize(ub))))
    if mode == "sup_raw":
        return max(gaps)
    return float(np.mean(gaps))


def family_distance_matrix(
    configs,
    ds: WeightedDataset,
    rng: RngStream,
    mode: str = "mean_normalized",
    n_inits: int = 8,
    n_batches: int = 4,
    batch_size: int = 32,
):
    """Pairwise distance matrix over a configuration family.

    When every member shares one parameter space the matrix is
    config_distance verbatim ("parameter" space). A family mixing
    architectures has no shared parameter space, so each one-step update is
    mapped to the common logit space instead: the normalized change of the
    model's logits on fixed probe inputs ("logit" space). Returns
    (matrix, space_name).
    """
    configs = list(configs)
    if len(configs) < 1:
        raise BadShape("empty family")
    classes = {c.model.num_classes for c in configs}
    if len(classes) > 1:
        raise DimMismatch("family members must share num_classes")
    shared_params = len({(c.model.param_dim, c.model.input_dim) for c in configs}) == 1
    m = len(configs)
    dist = np.zeros((m, m))
    if shared_params:
        probes = make_probes(configs[0].model, ds, rng, n_inits, n_batches, batch_size)
        for i in range(m):
            for j in range(i + 1, m):
                dist[i, j] = dist[j, i] = config_distance(configs[i], configs[j], probes, mode)
        return dist, "parameter"

    gen = rng.fork("batches").generator()
    size = min(batch_size, len(ds))
    batches = [
        ds.subset(np.sort(gen.choice(len(ds), size=size, replace=False)))
        for _ in range(n_batches)
    ]
    # Per-config parameters drawn with shared fork labels: identical models
    # receive identical draws, so duplicate configurations sit at distance 0.
    fields = []
    for cfg in configs:
        rows = []
        for i in range(n_inits):
            theta = models.init_params(cfg.model, rng.fork(f"theta{i}"))
            for j, batch in enumerate(batches):
                probe_idx = i * len(batches) + j
                aug_gen = (
                    None
                    if isinstance(cfg.augmentation, NoAugment)
                    else RngStream(_PROBE_AUG_SEED, (f"probe{probe_idx}",)).generator()
                )
                theta1, _ = step(cfg, theta, batch, None, aug_gen)
                before = models.predict_logits(cfg.model, theta, batch.features)
                after = models.predict_logits(cfg.model, theta1, batch.features)
                rows.append((after - before).ravel() / cfg.step_size)
        fields.append(rows)
    n_probes = n_inits * len(batches)
    for i in range(m):
        for j in range(i + 1, m):
            gaps = []
            for p in range(n_probes):
                ui, uj = fields[i][p], fields[j][p]
                if mode == "sup_raw":
                    gaps.append(float(np.linalg.norm(ui - uj)))
                else:
                    gaps.append(float(np.linalg.norm(_normalize(ui) - _normalize(uj))))
            dist[i, j] = dist[j, i] = max(gaps) if mode == "sup_raw" else float(np.mean(gaps))
    return dist, "logit"


@dataclass(frozen=True)
class CoverReport:
    """Greedy r-cover of a configuration family plus entropy estimates."""

    radius: float
    centers: tuple[int, ...]
    n_r: int
    h_cov: float
    proxy_log_m: float


def _check_matrix(dist) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise BadMatrix("distance matrix must be square")
    if np.any(dist < 0):
        raise BadMatrix("negative entries")
    if np.max(np.abs(dist - dist.T)) > 1e-9:
        raise BadMatrix("asymmetry beyond 1e-9")
    if np.max(np.abs(np.diag(dist))) > 1e-9:
        raise BadMatrix("nonzero diagonal")
    return dist


def greedy_cover(dist, r: float) -> CoverReport:
    """Greedy metric r-cover, lowest uncovered index chosen first.

    n_r is the number of centers; h_cov = ln n_r; proxy_log_m = ln M is the
    configuration-count proxy (h_cov <= proxy_log_m always).
    """
    dist = _check_matrix(dist)
    if r < 0:
        raise BadShape("r must be >= 0")
    m = dist.shape[0]
    covered = np.zeros(m, dtype=bool)
    centers = []
    while not covered.all():
        c = int(np.nonzero(~covered)[0][0])
        centers.append(c)
        covered |= dist[c] <= r
    n_r = len(centers)
    return CoverReport(float(r), tuple(centers), n_r, math.log(n_r), math.log(m))


def quantile_radius(dist, q: float) -> float:
    """Nearest-rank q-quantile of the off-diagonal pairwise distances."""
    dist = _check_matrix(dist)
    if not (0.0 < q < 1.0):
        raise BadShape("q must lie strictly between 0 and 1")
    m = dist.shape[0]
    if m < 2:
        raise BadMatrix("need at least 2 configurations")
    entries = np.sort(dist[np.triu_indices(m, k=1)])
    rank = max(1, math.ceil(q * entries.size))
    return float(entries[rank - 1])


@dataclass(frozen=True)
class DynamicsDiagnostics:
    """Empirical contraction ratio and preconditioner norm along runs."""

    rho_hat: float
    kappa_hat: float


def dynamics_diagnostics(cfg: Configuration, ds: WeightedDataset, pairs_of_inits, T: int) -> DynamicsDiagnostics:
    """Contraction and preconditioner diagnostics from paired runs.

    Each init pair trains T steps under one shared realized batch/
    augmentation schedule; rho_hat is the geometric mean of the per-step
    gap ratios ||theta_{t+1}-theta'_{t+1}|| / ||theta_t-theta'_t|| over all
    pairs (values above 1 are reported, not clamped). kappa_hat is the max
    preconditioner diagonal seen at any visited state.
    """
    if T < 1:
        raise BadShape("T must be >= 1")
    pairs = list(pairs_of_inits)
    if not pairs:
        raise BadShape("need at least one init pair")
    n = len(ds)
    bs = min(cfg.batch_size, n)
    full = bs >= n
    log_ratios = []
    hit_zero = False
    kappa = 0.0
    p_dim = cfg.model.param_dim
    for pair_idx, (theta_a, theta_b) in enumerate(pairs):
        theta_a = np.asarray(theta_a, dtype=float)
        theta_b = np.asarray(theta_b, dtype=float)
        gap = float(np.linalg.norm(theta_a - theta_b))
        if gap == 0.0:
            raise ZeroGap(f"init pair {pair_idx} coincides")
        stream = RngStream(_PROBE_AUG_SEED, ("dynamics", f"pair{pair_idx}"))
        sched_gen = None if full else stream.fork("batches").generator()
        aug_gen = (
            None if isinstance(cfg.augmentation, NoAugment) else stream.fork("augment").generator()
        )
        state_a = state_b = None
        kappa = max(kappa, float(np.max(state_diagonal(cfg.preconditioner, None, p_dim))))
        order = None
        cursor = 0
        for t in range(T):
            if full:
                batch = ds
            else:
                if order is None or cursor + bs > n:
                    order = sched_gen.permutation(n)
                    cursor = 0
                batch = ds.subset(order[cursor : cursor + bs])
                cursor += bs
            # One realized batch (including augmentation draws) applies to
            # both runs: that is what "identical schedules" means here.
            feats = augment_features(cfg.augmentation, batch.features, aug_gen)
            realized = WeightedDataset(feats, batch.labels, batch.weights, batch.num_classes)
            ga = models.dataset_mean_grad(cfg.model, theta_a, realized)
            gb = models.dataset_mean_grad(cfg.model, theta_b, realized)
            da, state_a = apply_update(cfg.preconditioner, state_a, ga)
            db, state_b = apply_update(cfg.preconditioner, state_b, gb)
            theta_a = theta_a - cfg.step_size * da
            theta_b = theta_b - cfg.step_size * db
            kappa = max(kappa, float(np.max(state_diagonal(cfg.preconditioner, state_a, p_dim))))
            kappa = max(kappa, float(np.max(state_diagonal(cfg.preconditioner, state_b, p_dim))))
            new_gap = float(np.linalg.norm(theta_a - theta_b))
            if new_gap == 0.0:
                hit_zero = True
                break
            log_ratios.append(math.log(new_gap) - math.log(gap))
            gap = new_gap
        if hit_zero:
            break
    if hit_zero:
        rho = 0.0
    else:
        rho = float(math.exp(np.mean(log_ratios)))
    return DynamicsDiagnostics(rho, float(kappa))
