"""Matching discrepancy between two measures under a configuration, the
three computable upper bounds on it (distribution, gradient, and trajectory
bridges), and the ordering checks among them.

The discrepancy is a probe-based lower bound of a parameter-space supremum;
the bridges multiply surrogate values by empirical constants. Empirical
Lipschitz estimates under-estimate the true constants, so callers that want
conservative bounds pass safety > 1 (recorded in the report).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import models
from .configspace import Configuration, Trajectory
from .errors import BadShape, DimMismatch
from .measures import WeightedDataset
from .models import LipschitzEstimates
from .numkit import RngStream
from .surrogates import Measure, as_dataset, mmd, sliced_w1
from .updates import field_apply, norm_bound

__all__ = [
    "BridgeReport",
    "ExchangeabilityReport",
    "matching_discrepancy",
    "bridge_bounds",
    "exchangeability_check",
]


@dataclass(frozen=True)
class BridgeReport:
    """Probe-based discrepancy plus its four bridge upper bounds.

    constants records every ingredient (including the safety factor applied
    to the Lipschitz estimates), so a report is self-describing.
    """

    delta_hat: float
    b_dm_w1: float
    b_dm_mmd: float
    b_gm: float
    b_tm: float
    constants: dict

    def to_json_record(self) -> dict:
        out = {
            "delta_hat": self.delta_hat,
            "b_dm_w1": self.b_dm_w1,
            "b_dm_mmd": self.b_dm_mmd,
            "b_gm": self.b_gm,
            "b_tm": self.b_tm,
        }
        for key, val in self.constants.items():
            out[key] = val
        return out


def matching_discrepancy(cfg: Configuration, mu: Measure, nu: Measure, theta_probes) -> float:
    """Max over probe parameters of ||P (gbar_mu - gbar_nu)||_2.

    P is the stateless preconditioner (for diag_adaptive, its fresh-state
    envelope (1/eps) I); the value is symmetric in the two measures and a
    lower bound of the parameter-space supremum.
    """
    probes = list(theta_probes)
    if not probes:
        raise BadShape("theta probes must be nonempty")
    m = as_dataset(mu)
    n = as_dataset(nu)
    if m.dim != n.dim:
        raise DimMismatch("measures have different feature dims")
    spec = cfg.model
    best = 0.0
    for theta in probes:
        diff = models.dataset_mean_grad(spec, theta, m) - models.dataset_mean_grad(spec, theta, n)
        best = max(best, float(np.linalg.norm(field_apply(cfg.preconditioner, diff))))
    return best


def bridge_bounds(
    cfg: Configuration,
    mu_s: Measure,
    mu_tau: Measure,
    theta_probes,
    anchors,
    traj_pair: tuple[Trajectory, Trajectory],
    rng: RngStream,
    sigma: float = 1.0,
    omega=None,
    eps_path: float = 0.0,
    c_k: float = 1.0,
    lips: Optional[LipschitzEstimates] = None,
    safety: float = 1.0,
    n_projections: int = 64,
    lipschitz_probes: int = 64,
    perturb_scale: float = 0.1,
) -> BridgeReport:
    """Evaluate the discrepancy and all bridge bounds on one instance.

    b_dm_w1 = kappa * L_z * SW1; b_dm_mmd = kappa * c_k * MMD;
    b_gm = kappa * |anchors| * (mean anchor gradient gap);
    b_tm = kappa * ((L_theta + 2/eta)/omega_min) * (path gap) +
    kappa * L_theta * eps_path. Lipschitz estimates (computed here unless
    given) are multiplied by safety before use and recorded as used.
    """
    anchors = list(anchors)
    if not anchors:
        raise BadShape("anchors must be nonempty")
    traj_s, traj_t = traj_pair
    if traj_s.params.shape != traj_t.params.shape:
        raise DimMismatch("trajectory pair shapes disagree")
    L = traj_s.steps
    omega = np.ones(L + 1) if omega is None else np.asarray(omega, dtype=float)
    if omega.shape != (L + 1,) or np.any(omega <= 0):
        raise BadShape("omega must have length L+1 with positive entries")

    s = as_dataset(mu_s)
    t = as_dataset(mu_tau)
    if lips is None:
        lips = models.estimate_lipschitz(
            cfg.model, cfg, t, lipschitz_probes, perturb_scale, rng.fork("lipschitz")
        )
    kappa = norm_bound(cfg.preconditioner)
    l_z = safety * lips.l_z
    l_theta = safety * lips.l_theta

    delta_hat = matching_discrepancy(cfg, s, t, theta_probes)
    w1 = sliced_w1(s, t, n_projections, rng.fork("slices"))
    mmd_val = mmd(s, t, sigma)

    spec = cfg.model
    anchor_gaps = [
        float(
            np.linalg.norm(
                models.dataset_mean_grad(spec, theta, s)
                - models.dataset_mean_grad(spec, theta, t)
            )
        )
        for theta in anchors
    ]
    m_gm = float(np.mean(anchor_gaps))
    m_tm = float(np.dot(omega, np.linalg.norm(traj_s.params - traj_t.params, axis=1)))

    omega_min = float(omega.min())
    eta = cfg.step_size
    report = BridgeReport(
        delta_hat=delta_hat,
        b_dm_w1=kappa * l_z * w1,
        b_dm_mmd=kappa * c_k * mmd_val,
        b_gm=kappa * len(anchors) * m_gm,
        b_tm=kappa * ((l_theta + 2.0 / eta) / omega_min) * m_tm + kappa * l_theta * eps_path,
        constants={
            "kappa_hat": kappa,
            "l_z_hat": l_z,
            "l_theta_hat": l_theta,
            "c_k": c_k,
            "omega_min": omega_min,
            "eta": eta,
            "eps_path": eps_path,
            "n_anchors": len(anchors),
            "safety": safety,
            "sliced_w1": w1,
            "mmd": mmd_val,
            "m_gm": m_gm,
            "m_tm": m_tm,
        },
    )
    return report


@dataclass(frozen=True)
class ExchangeabilityReport:
    holds: dict
    margins: dict


def exchangeability_check(report: BridgeReport) -> ExchangeabilityReport:
    """Ordering checks among the bounds; violations are data, not errors.

    Margins are signed (bound minus the value it should dominate); holds is
    margin >= -1e-9. The trajectory-vs-gradient ratio is recorded without a
    pass judgement (its constant is not identified here).
    """
    for value in (report.delta_hat, report.b_dm_w1, report.b_dm_mmd, report.b_gm, report.b_tm):
        if not math.isfinite(value):
            raise BadShape("report entries must be finite")
    c = report.constants
    slack = c["kappa_hat"] * c["l_theta_hat"] * c["eps_path"]
    margins = {
        "gm_vs_dm_w1": c["n_anchors"] * report.b_dm_w1 - report.b_gm,
        "delta_vs_dm_w1": report.b_dm_w1 - report.delta_hat,
        "delta_vs_dm_mmd": report.b_dm_mmd - report.delta_hat,
        "delta_vs_gm": report.b_gm - report.delta_hat,
        "delta_vs_tm": report.b_tm + slack - report.delta_hat,
    }
    holds = {key: bool(val >= -1e-9) for key, val in margins.items()}
    margins["tm_vs_gm_ratio"] = (
        report.b_tm / report.b_gm if report.b_gm > 0 else float("inf")
    )
    return ExchangeabilityReport(holds, margins)
