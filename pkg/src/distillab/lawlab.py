"""Law-verification harnesses.

Two experiments: the single-configuration scaling law (gap vs 1/sqrt(k))
and the configuration-coverage law (subset-averaged gap vs
sqrt(ln m)/sqrt(k)), plus the minimum-budget calculator derived from the
coverage fit. Both harnesses are pure functions of (inputs, seed): every
stochastic ingredient comes from a labeled fork of the experiment stream,
so worker count and scheduling order cannot change the results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import models
from .configspace import Configuration, train
from .distill import distill
from .errors import InfeasibleTarget
from .measures import WeightedDataset
from .numkit import LawFit, RngStream, ols_fit
from .surrogates import SyntheticSet

__all__ = [
    "GapRecord",
    "CoveragePoint",
    "RealBaseline",
    "train_real_baseline",
    "evaluate_gap",
    "scaling_experiment",
    "coverage_experiment",
    "kmin_estimate",
]

GAP_MODES = ("accuracy", "risk")


@dataclass(frozen=True)
class GapRecord:
    """Measured real-vs-synthetic gap for one (k, configuration) cell.

    delta follows the requested mode: signed accuracy gap
    acc_real - acc_syn_mean, or absolute risk gap. Both accuracy and risk
    readings are kept so records can be re-analyzed in either mode.
    """

    k: int
    config_id: str
    delta: float
    acc_real: float
    acc_syn_mean: float
    acc_syn_std: float
    repeats: int
    mode: str
    risk_real: float
    risk_syn_mean: float


@dataclass(frozen=True)
class CoveragePoint:
    m: int
    k: int
    x: float
    y: float
    subset_mode: str
    trial: int


@dataclass(frozen=True)
class RealBaseline:
    acc: float
    risk: float


def _train_and_score(
    cfg: Configuration,
    train_set: WeightedDataset,
    test_set: WeightedDataset,
    T: int,
    stream: RngStream,
) -> tuple[float, float]:
    theta0 = models.init_params(cfg.model, stream.fork(cfg.init_seed_label))
    traj = train(cfg, train_set, theta0, T, stream.fork("schedule"))
    theta = traj.final()
    return (
        models.accuracy(cfg.model, theta, test_set),
        models.risk(cfg.model, theta, test_set),
    )


def train_real_baseline(
    cfg: Configuration,
    mu_tau: WeightedDataset,
    test_set: WeightedDataset,
    T: int,
    rng: RngStream,
) -> RealBaseline:
    """One student run on the real data; the reference point for all gaps."""
    acc, risk = _train_and_score(cfg, mu_tau, test_set, T, rng)
    return RealBaseline(acc, risk)


def evaluate_gap(
    synthetic: SyntheticSet,
    target_cfg: Configuration,
    mu_tau: WeightedDataset,
    test_set: WeightedDataset,
    T: int,
    repeats: int,
    rng: RngStream,
    mode: str = "accuracy",
    baseline: Optional[RealBaseline] = None,
    repeat_labels: Optional[Sequence[str]] = None,
) -> GapRecord:
    """Train `repeats` students on the synthetic set and gap them against
    the real baseline.

    Repeat r draws its init and schedule from rng.fork(label_r), labels
    default to "rep0", "rep1", ... When no baseline is supplied, one is
    trained under the first repeat's label, which makes the gap exactly
    zero when the synthetic set reproduces the real data.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if T < 1:
        raise ValueError("T must be >= 1")
    if mode not in GAP_MODES:
        raise ValueError(f"unknown gap mode {mode!r}")
    labels = (
        [f"rep{r}" for r in range(repeats)] if repeat_labels is None else list(repeat_labels)
    )
    if len(labels) != repeats:
        raise ValueError("repeat_labels length must equal repeats")

    if baseline is None:
        baseline = train_real_baseline(target_cfg, mu_tau, test_set, T, rng.fork(labels[0]))

    syn_ds = synthetic.to_dataset()
    accs = np.empty(repeats)
    risks = np.empty(repeats)
    for r, label in enumerate(labels):
        accs[r], risks[r] = _train_and_score(target_cfg, syn_ds, test_set, T, rng.fork(label))

    acc_mean = float(accs.mean())
    risk_mean = float(risks.mean())
    delta = (
        baseline.acc - acc_mean if mode == "accuracy" else abs(risk_mean - baseline.risk)
    )
    return GapRecord(
        k=synthetic.k,
        config_id=target_cfg.id,
        delta=delta,
        acc_real=baseline.acc,
        acc_syn_mean=acc_mean,
        acc_syn_std=float(accs.std()),
        repeats=repeats,
        mode=mode,
        risk_real=baseline.risk,
        risk_syn_mean=risk_mean,
    )


def scaling_experiment(
    mu_tau: WeightedDataset,
    test_set: WeightedDataset,
    method: str,
    ipcs: Sequence[int],
    cfg: Configuration,
    J: int,
    repeats: int,
    rng: RngStream,
    *,
    train_steps: int = 100,
    outer_lr: float = 1.0,
    mode: str = "accuracy",
    collect_runs: Optional[list] = None,
    **distill_kwargs,
) -> tuple[list[GapRecord], LawFit]:
    """Gap-vs-budget law on a single configuration.

    Distills once per ipc, evaluates each synthetic set with `repeats`
    student runs against one shared real baseline, and fits delta against
    1/sqrt(k). Pass collect_runs to receive the DistillRun per ipc (the
    command layer persists them).
    """
    ipcs = list(ipcs)
    if len(ipcs) < 3:
        raise ValueError("need >= 3 ipc values")
    if any(b <= a for a, b in zip(ipcs, ipcs[1:])):
        raise ValueError("ipcs must be strictly increasing")

    baseline = train_real_baseline(cfg, mu_tau, test_set, train_steps, rng.fork("baseline"))
    records = []
    for ipc in ipcs:
        run = distill(
            mu_tau, method, cfg, ipc, J, outer_lr, rng.fork(f"distill_ipc{ipc}"), **distill_kwargs
        )
        if collect_runs is not None:
            collect_runs.append(run)
        records.append(
            evaluate_gap(
                run.result,
                cfg,
                mu_tau,
                test_set,
                train_steps,
                repeats,
                rng.fork(f"eval_ipc{ipc}"),
                mode=mode,
                baseline=baseline,
            )
        )
    xs = [1.0 / math.sqrt(rec.k) for rec in records]
    ys = [rec.delta for rec in records]
    return records, ols_fit(xs, ys)


def _eval_task(payload):
    key, synthetic, cfg, mu_tau, test_set, T, repeats, stream, mode, baseline = payload
    rec = evaluate_gap(
        synthetic, cfg, mu_tau, test_set, T, repeats, stream, mode=mode, baseline=baseline
    )
    return key, rec


def coverage_experiment(
    mu_tau: WeightedDataset,
    test_set: WeightedDataset,
    method: str,
    ipcs: Sequence[int],
    configs: Sequence[Configuration],
    subset_mode: str,
    trials: int,
    J: int,
    rng: RngStream,
    *,
    source_config: Optional[Configuration] = None,
    train_steps: int = 100,
    outer_lr: float = 1.0,
    repeats: int = 1,
    mode: str = "accuracy",
    workers: int = 1,
    collect_runs: Optional[list] = None,
    collect_records: Optional[list] = None,
    **distill_kwargs,
) -> tuple[list[CoveragePoint], LawFit]:
    """Coverage law over a configuration family.

    One synthetic set per ipc (distilled under source_config, defaulting to
    the first family member), one gap record per (k, config id), then
    subset-averaged points y vs x = sqrt(ln m)/sqrt(k) for every subset
    size m in 2..M and one OLS fit over all of them. Duplicate ids in the
    family share a record, so literal copies cannot inflate the average.
    The (k, config) grid is an independent task set; workers > 1 fans it
    out over processes and the sorted aggregation keeps results identical
    to the sequential run.
    """
    ipcs = list(ipcs)
    configs = list(configs)
    if not ipcs:
        raise ValueError("need >= 1 ipc value")
    if any(b <= a for a, b in zip(ipcs, ipcs[1:])):
        raise ValueError("ipcs must be strictly increasing")
    if len(configs) < 2:
        raise ValueError("need >= 2 configurations")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if subset_mode not in ("prefix", "random"):
        raise ValueError(f"unknown subset mode {subset_mode!r}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    src = configs[0] if source_config is None else source_config

    baselines = {}
    for cfg in configs:
        if cfg.id not in baselines:
            baselines[cfg.id] = train_real_baseline(
                cfg, mu_tau, test_set, train_steps, rng.fork("baseline").fork(cfg.id)
            )

    synthetic = {}
    for ipc in ipcs:
        run = distill(
            mu_tau, method, src, ipc, J, outer_lr, rng.fork(f"distill_ipc{ipc}"), **distill_kwargs
        )
        synthetic[ipc] = run
        if collect_runs is not None:
            collect_runs.append(run)

    # one record per (k, config id): duplicates in the family share it
    tasks = []
    seen = set()
    for ipc in ipcs:
        for cfg in configs:
            key = (synthetic[ipc].result.k, cfg.id)
            if key in seen:
                continue
            seen.add(key)
            tasks.append(
                (
                    key,
                    synthetic[ipc].result,
                    cfg,
                    mu_tau,
                    test_set,
                    train_steps,
                    repeats,
                    rng.fork(f"eval_ipc{ipc}_cfg{cfg.id}"),
                    mode,
                    baselines[cfg.id],
                )
            )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_task, tasks))
    else:
        results = [_eval_task(t) for t in tasks]
    grid = dict(sorted(results, key=lambda kv: kv[0]))
    if collect_records is not None:
        collect_records.extend(grid.values())

    M = len(configs)
    points = []
    subset_gen = rng.fork("subsets").generator()
    for m in range(2, M + 1):
        if subset_mode == "prefix":
            subsets = [(0, list(range(m)))]
        else:
            subsets = [
                (t, sorted(subset_gen.choice(M, size=m, replace=False).tolist()))
                for t in range(trials)
            ]
        for trial, subset in subsets:
            for ipc in ipcs:
                k = synthetic[ipc].result.k
                y = float(np.mean([grid[(k, configs[i].id)].delta for i in subset]))
                x = math.sqrt(math.log(m)) / math.sqrt(k)
                points.append(CoveragePoint(m, k, x, y, subset_mode, trial))
    fit = ols_fit([p.x for p in points], [p.y for p in points])
    return points, fit


def kmin_estimate(fit: LawFit, eps0: float, log_m: float) -> int:
    """Smallest per-configuration budget that meets the target gap.

    Inverts y = slope*x + intercept at x = sqrt(log_m)/sqrt(k):
    ceil(slope^2 * log_m / (eps0 - intercept)^2).
    """
    if log_m < 0:
        raise ValueError("log_m must be >= 0")
    if eps0 <= fit.intercept:
        raise InfeasibleTarget(
            f"target {eps0} is at or below the fitted floor {fit.intercept}"
        )
    return math.ceil((fit.slope**2) * log_m / (eps0 - fit.intercept) ** 2)
