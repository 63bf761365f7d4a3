"""Command-line front end.

Reads a JSON run-config, validates it completely before any compute
(unknown keys are rejected at every nesting level), runs one of the four
commands, and persists results as CSV/JSON plus a minimal hand-emitted SVG
scatter+fit plot. Reruns with the same config and seed are byte-identical:
no timestamps, 17-significant-digit floats, fixed key order.

Exit codes: 0 success, 2 config validation failure (nothing written),
3 runtime failure (partial traces are flushed when available).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import models
from .configspace import (
    FULL_BATCH,
    Configuration,
    family_distance_matrix,
    greedy_cover,
    quantile_radius,
    train,
)
from .discrepancy import bridge_bounds, exchangeability_check
from .distill import distill
from .errors import ConfigError, DistillabError, InfeasibleTarget, NonFiniteGradient
from .lawlab import GAP_MODES, coverage_experiment, kmin_estimate, scaling_experiment
from .measures import load_idx, make_gaussian_mixture, split
from .models import ModelSpec
from .numkit import RngStream
from .surrogates import OBJECTIVES, median_heuristic_sigma
from .updates import CoordFlip, DiagAdaptive, GaussianNoise, Identity, NoAugment, Scaled

__all__ = ["main", "parse_runconfig", "cmd_distill", "cmd_scaling", "cmd_coverage", "cmd_bridges"]

_MISSING = object()


# -- config parsing ----------------------------------------------------------


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def _get(obj, key, path, default=_MISSING):
    if key in obj:
        return obj[key]
    if default is _MISSING:
        raise ConfigError(f"{path}.{key}: required key missing")
    return default


def _get_int(obj, key, path, default=_MISSING, minimum=None):
    val = _get(obj, key, path, default)
    if val is default and default is not _MISSING:
        return val
    if not isinstance(val, int) or isinstance(val, bool):
        raise ConfigError(f"{path}.{key}: expected an integer")
    if minimum is not None and val < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}")
    return val


def _get_num(obj, key, path, default=_MISSING, minimum=None, exclusive=False):
    val = _get(obj, key, path, default)
    if val is default and default is not _MISSING:
        return val
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number")
    val = float(val)
    if not math.isfinite(val):
        raise ConfigError(f"{path}.{key}: must be finite")
    if minimum is not None and (val <= minimum if exclusive else val < minimum):
        op = ">" if exclusive else ">="
        raise ConfigError(f"{path}.{key}: must be {op} {minimum}")
    return val


def _get_str(obj, key, path, default=_MISSING, choices=None):
    val = _get(obj, key, path, default)
    if val is default and default is not _MISSING:
        return val
    if not isinstance(val, str):
        raise ConfigError(f"{path}.{key}: expected a string")
    if choices is not None and val not in choices:
        raise ConfigError(f"{path}.{key}: must be one of {sorted(choices)}")
    return val


def _get_bool(obj, key, path, default=_MISSING):
    val = _get(obj, key, path, default)
    if val is default and default is not _MISSING:
        return val
    if not isinstance(val, bool):
        raise ConfigError(f"{path}.{key}: expected true or false")
    return val


def _parse_ipcs(obj, path, min_count):
    vals = _get(obj, "ipcs", path)
    if not isinstance(vals, list) or len(vals) < min_count:
        raise ConfigError(f"{path}.ipcs: expected a list of >= {min_count} integers")
    for v in vals:
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{path}.ipcs: entries must be integers >= 1")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{path}.ipcs: must be strictly increasing")
    return list(vals)


def _parse_model(obj, path):
    _check_keys(obj, {"kind", "hidden_dim"}, path)
    kind = _get_str(obj, "kind", path, choices={"softmax_linear", "mlp1"})
    hidden = _get_int(obj, "hidden_dim", path, default=0, minimum=0)
    if kind == "softmax_linear" and hidden != 0:
        raise ConfigError(f"{path}.hidden_dim: not applicable to softmax_linear")
    if kind == "mlp1" and hidden < 1:
        raise ConfigError(f"{path}.hidden_dim: mlp1 needs hidden_dim >= 1")
    return {"kind": kind, "hidden_dim": hidden}


def _model_tag(parsed):
    if parsed["kind"] == "mlp1":
        return f"mlp1h{parsed['hidden_dim']}"
    return parsed["kind"]


def _parse_precond(obj, path):
    kind = _get_str(obj, "kind", path, choices={"identity", "scaled", "diag_adaptive"})
    if kind == "identity":
        _check_keys(obj, {"kind"}, path)
        return Identity()
    if kind == "scaled":
        _check_keys(obj, {"kind", "c"}, path)
        return Scaled(_get_num(obj, "c", path, minimum=0.0, exclusive=True))
    _check_keys(obj, {"kind", "beta", "eps"}, path)
    return DiagAdaptive(
        beta=_get_num(obj, "beta", path, default=0.9),
        eps=_get_num(obj, "eps", path, default=0.1, minimum=0.0, exclusive=True),
    )


def _precond_tag(precond):
    if isinstance(precond, Scaled):
        return f"scaled{precond.c:g}"
    if isinstance(precond, DiagAdaptive):
        return "diag_adaptive"
    return "identity"


def _parse_augment(obj, path):
    kind = _get_str(obj, "kind", path, choices={"none", "gaussian_noise", "coord_flip"})
    if kind == "none":
        _check_keys(obj, {"kind"}, path)
        return NoAugment()
    if kind == "gaussian_noise":
        _check_keys(obj, {"kind", "sigma"}, path)
        return GaussianNoise(_get_num(obj, "sigma", path, minimum=0.0))
    _check_keys(obj, {"kind", "prob"}, path)
    return CoordFlip(_get_num(obj, "prob", path, minimum=0.0))


def _parse_batch_size(obj, path):
    val = _get(obj, "batch_size", path, default="full")
    if val == "full":
        return FULL_BATCH
    if isinstance(val, int) and not isinstance(val, bool) and val >= 1:
        return val
    raise ConfigError(f"{path}.batch_size: expected \"full\" or an integer >= 1")


_CONFIG_KEYS = {"id", "model", "preconditioner", "step_size", "augmentation", "batch_size"}


def _parse_config(obj, path):
    """Structural validation only; ModelSpec needs dataset dims to build."""
    _check_keys(obj, _CONFIG_KEYS, path)
    model = _parse_model(_get(obj, "model", path), f"{path}.model")
    precond = _parse_precond(
        _get(obj, "preconditioner", path, default={"kind": "identity"}),
        f"{path}.preconditioner",
    )
    aug = _parse_augment(
        _get(obj, "augmentation", path, default={"kind": "none"}), f"{path}.augmentation"
    )
    parsed = {
        "id": _get_str(obj, "id", path, default=""),
        "model": model,
        "preconditioner": precond,
        "step_size": _get_num(obj, "step_size", path, default=0.1, minimum=0.0, exclusive=True),
        "augmentation": aug,
        "batch_size": _parse_batch_size(obj, path),
    }
    if not parsed["id"]:
        parsed["id"] = f"{_model_tag(model)}+{_precond_tag(precond)}"
    return parsed


def _parse_family(obj, path):
    _check_keys(
        obj, {"models", "preconditioners", "step_size", "augmentation", "batch_size"}, path
    )
    raw_models = _get(obj, "models", path)
    raw_preconds = _get(obj, "preconditioners", path)
    if not isinstance(raw_models, list) or not raw_models:
        raise ConfigError(f"{path}.models: expected a nonempty list")
    if not isinstance(raw_preconds, list) or not raw_preconds:
        raise ConfigError(f"{path}.preconditioners: expected a nonempty list")
    model_list = [
        _parse_model(m, f"{path}.models[{i}]") for i, m in enumerate(raw_models)
    ]
    precond_list = [
        _parse_precond(p, f"{path}.preconditioners[{i}]") for i, p in enumerate(raw_preconds)
    ]
    shared = {
        "step_size": _get_num(obj, "step_size", path, default=0.1, minimum=0.0, exclusive=True),
        "augmentation": _parse_augment(
            _get(obj, "augmentation", path, default={"kind": "none"}), f"{path}.augmentation"
        ),
        "batch_size": _parse_batch_size(obj, path),
    }
    family = []
    for model in model_list:
        for precond in precond_list:
            family.append(
                {
                    "id": f"{_model_tag(model)}+{_precond_tag(precond)}",
                    "model": model,
                    "preconditioner": precond,
                    **shared,
                }
            )
    if len(family) < 2:
        raise ConfigError(f"{path}: family must contain >= 2 configurations")
    return family


def _parse_dataset(obj, path):
    kind = _get_str(obj, "kind", path, choices={"gaussian_mixture", "idx"})
    if kind == "gaussian_mixture":
        _check_keys(
            obj,
            {
                "kind",
                "num_classes",
                "dim",
                "n_per_class",
                "class_separation",
                "noise_sigma",
                "test_fraction",
            },
            path,
        )
        parsed = {
            "kind": kind,
            "num_classes": _get_int(obj, "num_classes", path, minimum=2),
            "dim": _get_int(obj, "dim", path, minimum=1),
            "n_per_class": _get_int(obj, "n_per_class", path, minimum=2),
            "class_separation": _get_num(obj, "class_separation", path, minimum=0.0),
            "noise_sigma": _get_num(obj, "noise_sigma", path, minimum=0.0, exclusive=True),
            "test_fraction": _get_num(obj, "test_fraction", path, default=0.5),
        }
        if not 0.0 < parsed["test_fraction"] < 1.0:
            raise ConfigError(f"{path}.test_fraction: must be strictly between 0 and 1")
        return parsed
    _check_keys(obj, {"kind", "train_images", "train_labels", "test_images", "test_labels"}, path)
    parsed = {"kind": kind}
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        val = _get_str(obj, key, path)
        if not os.path.isfile(val):
            raise ConfigError(f"{path}.{key}: no such file: {val}")
        parsed[key] = val
    return parsed


def _parse_surrogate(obj, path):
    _check_keys(
        obj,
        {"sigma", "class_conditional", "n_projections", "gm_anchors", "gm_anchor_steps", "tm_unroll"},
        path,
    )
    sigma = _get(obj, "sigma", path, default=None)
    if sigma is not None:
        sigma = _get_num(obj, "sigma", path, minimum=0.0, exclusive=True)
    return {
        "sigma": sigma,
        "class_conditional": _get_bool(obj, "class_conditional", path, default=False),
        "n_projections": _get_int(obj, "n_projections", path, default=64, minimum=1),
        "gm_anchors": _get_int(obj, "gm_anchors", path, default=5, minimum=1),
        "gm_anchor_steps": _get_int(obj, "gm_anchor_steps", path, default=20, minimum=1),
        "tm_unroll": _get_int(obj, "tm_unroll", path, default=5, minimum=1),
    }


def _parse_bridges_section(obj, path):
    _check_keys(
        obj,
        {
            "ipc",
            "n_probes",
            "n_anchors",
            "anchor_steps",
            "safety",
            "eps_path",
            "c_k",
            "lipschitz_probes",
            "perturb_scale",
        },
        path,
    )
    parsed = {
        "ipc": _get_int(obj, "ipc", path, default=8, minimum=1),
        "n_probes": _get_int(obj, "n_probes", path, default=4, minimum=1),
        "n_anchors": _get_int(obj, "n_anchors", path, default=8, minimum=1),
        "anchor_steps": _get_int(obj, "anchor_steps", path, default=40, minimum=1),
        "safety": _get_num(obj, "safety", path, default=1.5, minimum=1.0),
        "eps_path": _get_num(obj, "eps_path", path, default=0.0, minimum=0.0),
        "c_k": _get_num(obj, "c_k", path, default=1.0, minimum=0.0, exclusive=True),
        "lipschitz_probes": _get_int(obj, "lipschitz_probes", path, default=32, minimum=2),
        "perturb_scale": _get_num(obj, "perturb_scale", path, default=0.1, minimum=0.0, exclusive=True),
    }
    if parsed["n_probes"] > parsed["n_anchors"]:
        raise ConfigError(f"{path}.n_probes: must be <= n_anchors")
    return parsed


_TOP_KEYS = {
    "seed",
    "out",
    "dataset",
    "method",
    "source",
    "target_family",
    "ipcs",
    "J",
    "outer_lr",
    "repeats",
    "train_steps",
    "mode",
    "subset_mode",
    "trials",
    "surrogate",
    "bridges",
}


def parse_runconfig(raw, command, mode_override=None, seed_override=None):
    """Validate the full run-config for `command` without touching data.

    Returns a plain dict of parsed values; configurations stay in
    structural form (dataset dims are needed to finish them).
    """
    _check_keys(raw, _TOP_KEYS, "config")
    seed = _get_int(raw, "seed", "config", minimum=0)
    if seed_override is not None:
        try:
            seed = int(seed_override)
        except ValueError:
            raise ConfigError(
                f"DISTILL_LAWLAB_SEED: not an integer: {seed_override!r}"
            ) from None
        if seed < 0:
            raise ConfigError("DISTILL_LAWLAB_SEED: must be >= 0")
    run = {
        "command": command,
        "seed": seed,
        "out": _get_str(raw, "out", "config", default=None),
        "dataset": _parse_dataset(_get(raw, "dataset", "config"), "config.dataset"),
        "method": _get_str(raw, "method", "config", choices=set(OBJECTIVES)),
        "J": _get_int(raw, "J", "config", minimum=1),
        "outer_lr": _get_num(raw, "outer_lr", "config", default=0.5, minimum=0.0),
        "repeats": _get_int(raw, "repeats", "config", default=5, minimum=1),
        "train_steps": _get_int(raw, "train_steps", "config", default=100, minimum=1),
        "mode": _get_str(raw, "mode", "config", default="accuracy", choices=set(GAP_MODES)),
        "subset_mode": _get_str(
            raw, "subset_mode", "config", default="prefix", choices={"prefix", "random"}
        ),
        "trials": _get_int(raw, "trials", "config", default=5, minimum=1),
        "surrogate": _parse_surrogate(_get(raw, "surrogate", "config", default={}), "config.surrogate"),
        "bridges": _parse_bridges_section(_get(raw, "bridges", "config", default={}), "config.bridges"),
    }
    if mode_override is not None:
        run["mode"] = mode_override

    if command == "coverage":
        run["family"] = _parse_family(_get(raw, "target_family", "config"), "config.target_family")
        if "source" in raw:
            run["source"] = _parse_config(raw["source"], "config.source")
        else:
            run["source"] = None
    else:
        run["source"] = _parse_config(_get(raw, "source", "config"), "config.source")

    if command == "scaling":
        run["ipcs"] = _parse_ipcs(raw, "config", min_count=3)
    elif command in ("distill", "coverage"):
        run["ipcs"] = _parse_ipcs(raw, "config", min_count=1)
    return run


# -- dataset / configuration construction ------------------------------------


def _build_datasets(parsed, root):
    if parsed["kind"] == "gaussian_mixture":
        full = make_gaussian_mixture(
            parsed["num_classes"],
            parsed["dim"],
            parsed["n_per_class"],
            parsed["class_separation"],
            parsed["noise_sigma"],
            root.fork("data"),
        )
        return split(full, 1.0 - parsed["test_fraction"], root.fork("split"))
    train_set = load_idx(parsed["train_images"], parsed["train_labels"])
    test_set = load_idx(parsed["test_images"], parsed["test_labels"])
    return train_set, test_set


def _build_config(parsed, input_dim, num_classes):
    m = parsed["model"]
    spec = ModelSpec(m["kind"], input_dim, num_classes, m["hidden_dim"])
    return Configuration(
        id=parsed["id"],
        model=spec,
        preconditioner=parsed["preconditioner"],
        step_size=parsed["step_size"],
        augmentation=parsed["augmentation"],
        batch_size=parsed["batch_size"],
    )


def _config_json(cfg):
    precond = cfg.preconditioner
    if isinstance(precond, Scaled):
        pj = {"kind": "scaled", "c": precond.c}
    elif isinstance(precond, DiagAdaptive):
        pj = {"kind": "diag_adaptive", "beta": precond.beta, "eps": precond.eps}
    else:
        pj = {"kind": "identity"}
    aug = cfg.augmentation
    if isinstance(aug, GaussianNoise):
        aj = {"kind": "gaussian_noise", "sigma": aug.sigma}
    elif isinstance(aug, CoordFlip):
        aj = {"kind": "coord_flip", "prob": aug.prob}
    else:
        aj = {"kind": "none"}
    return {
        "id": cfg.id,
        "model": {
            "kind": cfg.model.kind,
            "input_dim": cfg.model.input_dim,
            "num_classes": cfg.model.num_classes,
            "hidden_dim": cfg.model.hidden_dim,
        },
        "preconditioner": pj,
        "step_size": cfg.step_size,
        "augmentation": aj,
        "batch_size": "full" if cfg.batch_size == FULL_BATCH else cfg.batch_size,
    }


# -- output helpers -----------------------------------------------------------


def _fmt(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    if isinstance(val, (float, np.floating)):
        return f"{float(val):.17g}"
    return str(val)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path, obj):
    with open(path, "w", newline="") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fit_json(fit):
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "n_points": fit.n_points,
    }


def _svg_plot(xs, ys, fit, x_label, y_label):
    """Scatter plus fitted line: circles, <line> axes and ticks, and exactly
    one <path> element (the fit)."""
    width, height = 640, 480
    left, right, top, bottom = 70, 20, 20, 50
    x_lo = 0.0
    x_hi = max(xs) * 1.05 if xs and max(xs) > 0 else 1.0
    fit_ys = [fit.intercept + fit.slope * x_lo, fit.intercept + fit.slope * x_hi]
    y_all = list(ys) + fit_ys
    y_lo, y_hi = min(y_all), max(y_all)
    pad = 0.05 * (y_hi - y_lo) if y_hi > y_lo else 1.0
    y_lo -= pad
    y_hi += pad

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * (width - left - right)

    def sy(v):
        return height - bottom - (v - y_lo) / (y_hi - y_lo) * (height - top - bottom)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="#000000" stroke-width="1"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" '
        f'stroke="#000000" stroke-width="1"/>',
    ]
    for i in range(5):
        xv = x_lo + (x_hi - x_lo) * i / 4
        yv = y_lo + (y_hi - y_lo) * i / 4
        px, py = sx(xv), sy(yv)
        parts.append(
            f'<line x1="{px:.2f}" y1="{height - bottom}" x2="{px:.2f}" '
            f'y2="{height - bottom + 5}" stroke="#000000" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{height - bottom + 18}" font-size="11" '
            f'font-family="monospace" text-anchor="middle">{xv:.3g}</text>'
        )
        parts.append(
            f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" y2="{py:.2f}" '
            f'stroke="#000000" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{py + 4:.2f}" font-size="11" '
            f'font-family="monospace" text-anchor="end">{yv:.3g}</text>'
        )
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="#4477aa"/>')
    parts.append(
        f'<path d="M {sx(x_lo):.2f} {sy(fit_ys[0]):.2f} L {sx(x_hi):.2f} '
        f'{sy(fit_ys[1]):.2f}" stroke="#cc3311" stroke-width="2" fill="none"/>'
    )
    parts.append(
        f'<text x="{(left + width - right) / 2:.2f}" y="{height - 10}" font-size="13" '
        f'font-family="monospace" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{(top + height - bottom) / 2:.2f}" font-size="13" '
        f'font-family="monospace" text-anchor="middle" '
        f'transform="rotate(-90 16 {(top + height - bottom) / 2:.2f})">{y_label}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_synthetic(out_dir, run, cfg, drun):
    ipc = drun.ipc
    ds = drun.result
    header = ["label"] + [f"f{i}" for i in range(ds.atoms.shape[1])]
    rows = [
        [int(ds.labels[i])] + [float(v) for v in ds.atoms[i]] for i in range(ds.k)
    ]
    _write_csv(os.path.join(out_dir, f"synthetic_ipc{ipc}.csv"), header, rows)
    _write_json(
        os.path.join(out_dir, f"synthetic_ipc{ipc}.meta.json"),
        {
            "method": drun.method,
            "config": _config_json(cfg),
            "J": drun.outer_iters,
            "outer_lr": drun.outer_lr,
            "seed": run["seed"],
            "ipc": ipc,
            "k": ds.k,
            "num_classes": ds.num_classes,
            "alpha_hat": drun.trace.alpha_hat,
            "floor_hat": drun.trace.floor_hat,
        },
    )
    _write_trace(out_dir, ipc, drun.trace.values)


def _write_trace(out_dir, ipc, values):
    _write_csv(
        os.path.join(out_dir, f"trace_ipc{ipc}.csv"),
        ["iteration", "value"],
        [[i, float(v)] for i, v in enumerate(values)],
    )


def _records_rows(records):
    return [
        [r.k, r.config_id, r.repeats, r.acc_real, r.acc_syn_mean, r.acc_syn_std, r.delta, r.mode]
        for r in records
    ]


_RECORDS_HEADER = [
    "k",
    "config_id",
    "repeats",
    "acc_real",
    "acc_syn_mean",
    "acc_syn_std",
    "delta",
    "mode",
]


# -- commands -----------------------------------------------------------------


def cmd_distill(run, out_dir):
    root = RngStream(run["seed"])
    mu_tau, _ = _build_datasets(run["dataset"], root)
    cfg = _build_config(run["source"], mu_tau.dim, mu_tau.num_classes)
    for ipc in run["ipcs"]:
        try:
            drun = distill(
                mu_tau,
                run["method"],
                cfg,
                ipc,
                run["J"],
                run["outer_lr"],
                root.fork(f"distill_ipc{ipc}"),
                **run["surrogate"],
            )
        except NonFiniteGradient as exc:
            if exc.partial_trace is not None:
                _write_trace(out_dir, ipc, exc.partial_trace)
            raise
        _write_synthetic(out_dir, run, cfg, drun)


def cmd_scaling(run, out_dir):
    root = RngStream(run["seed"])
    mu_tau, test_set = _build_datasets(run["dataset"], root)
    cfg = _build_config(run["source"], mu_tau.dim, mu_tau.num_classes)
    records, fit = scaling_experiment(
        mu_tau,
        test_set,
        run["method"],
        run["ipcs"],
        cfg,
        run["J"],
        run["repeats"],
        root.fork("experiment"),
        train_steps=run["train_steps"],
        outer_lr=run["outer_lr"],
        mode=run["mode"],
        **run["surrogate"],
    )
    _write_csv(os.path.join(out_dir, "records.csv"), _RECORDS_HEADER, _records_rows(records))
    fits = _fit_json(fit)
    fits["meta"] = {
        "command": "scaling",
        "method": run["method"],
        "config_id": cfg.id,
        "ipcs": run["ipcs"],
        "J": run["J"],
        "outer_lr": run["outer_lr"],
        "repeats": run["repeats"],
        "train_steps": run["train_steps"],
        "mode": run["mode"],
        "seed": run["seed"],
        "x_axis": "1/sqrt(k)",
    }
    _write_json(os.path.join(out_dir, "fits.json"), fits)
    xs = [1.0 / math.sqrt(r.k) for r in records]
    ys = [r.delta for r in records]
    with open(os.path.join(out_dir, "scaling.svg"), "w", newline="") as fh:
        fh.write(_svg_plot(xs, ys, fit, "1/sqrt(k)", "Delta"))


def cmd_coverage(run, out_dir, workers, eps0):
    root = RngStream(run["seed"])
    mu_tau, test_set = _build_datasets(run["dataset"], root)
    configs = [_build_config(p, mu_tau.dim, mu_tau.num_classes) for p in run["family"]]
    source = (
        _build_config(run["source"], mu_tau.dim, mu_tau.num_classes)
        if run["source"] is not None
        else None
    )
    records = []
    points, fit = coverage_experiment(
        mu_tau,
        test_set,
        run["method"],
        run["ipcs"],
        configs,
        run["subset_mode"],
        run["trials"],
        run["J"],
        root.fork("experiment"),
        source_config=source,
        train_steps=run["train_steps"],
        outer_lr=run["outer_lr"],
        repeats=run["repeats"],
        mode=run["mode"],
        workers=workers,
        collect_records=records,
        **run["surrogate"],
    )
    _write_csv(
        os.path.join(out_dir, "coverage.csv"),
        ["m", "k", "x", "y", "subset_mode", "trial"],
        [[p.m, p.k, p.x, p.y, p.subset_mode, p.trial] for p in points],
    )
    _write_csv(os.path.join(out_dir, "records.csv"), _RECORDS_HEADER, _records_rows(records))

    dmat, space = family_distance_matrix(configs, mu_tau, root.fork("dA"))
    radius = quantile_radius(dmat, 0.5)
    cover = greedy_cover(dmat, radius)
    _write_json(
        os.path.join(out_dir, "cover_report.json"),
        {
            "radius": cover.radius,
            "centers": list(cover.centers),
            "n_r": cover.n_r,
            "h_cov": cover.h_cov,
            "proxy_log_m": cover.proxy_log_m,
            "space": space,
            "config_ids": [c.id for c in configs],
            "distance_matrix": [[float(v) for v in row] for row in dmat],
        },
    )
    fits = _fit_json(fit)
    fits["meta"] = {
        "command": "coverage",
        "method": run["method"],
        "config_ids": [c.id for c in configs],
        "source_config_id": (source or configs[0]).id,
        "ipcs": run["ipcs"],
        "J": run["J"],
        "outer_lr": run["outer_lr"],
        "repeats": run["repeats"],
        "train_steps": run["train_steps"],
        "mode": run["mode"],
        "subset_mode": run["subset_mode"],
        "trials": run["trials"],
        "seed": run["seed"],
        "x_axis": "sqrt(ln m)/sqrt(k)",
        "m_one_excluded": True,
    }
    log_m = math.log(len(configs))
    if eps0 is not None:
        kmin = {"eps0": eps0, "log_m": log_m}
        try:
            kmin["kmin"] = kmin_estimate(fit, eps0, log_m)
            kmin["infeasible"] = False
        except InfeasibleTarget:
            kmin["kmin"] = None
            kmin["infeasible"] = True
        fits["kmin"] = kmin
    _write_json(os.path.join(out_dir, "fits.json"), fits)
    with open(os.path.join(out_dir, "coverage.svg"), "w", newline="") as fh:
        fh.write(
            _svg_plot([p.x for p in points], [p.y for p in points], fit, "sqrt(ln m)/sqrt(k)", "Delta")
        )


def cmd_bridges(run, out_dir):
    root = RngStream(run["seed"])
    mu_tau, _ = _build_datasets(run["dataset"], root)
    cfg = _build_config(run["source"], mu_tau.dim, mu_tau.num_classes)
    knobs = run["bridges"]

    drun = distill(
        mu_tau,
        run["method"],
        cfg,
        knobs["ipc"],
        run["J"],
        run["outer_lr"],
        root.fork("bridges_distill"),
        **run["surrogate"],
    )
    theta0 = models.init_params(cfg.model, root.fork("bridges_theta0"))
    anchor_traj = train(cfg, mu_tau, theta0, knobs["anchor_steps"], root.fork("bridges_anchor_sched"))
    picks = np.unique(
        np.round(np.linspace(0, anchor_traj.steps, knobs["n_anchors"])).astype(int)
    )
    anchors = [anchor_traj.params[i] for i in picks]
    probes = anchors[: knobs["n_probes"]]

    L = run["surrogate"]["tm_unroll"]
    tm_theta0 = models.init_params(cfg.model, root.fork("bridges_tm_theta0"))
    traj_s = train(cfg, drun.result.to_dataset(), tm_theta0, L, root.fork("bridges_tm_sched"))
    traj_t = train(cfg, mu_tau, tm_theta0, L, root.fork("bridges_tm_sched"))

    sigma = run["surrogate"]["sigma"]
    if sigma is None:
        sigma = median_heuristic_sigma(mu_tau)
    report = bridge_bounds(
        cfg,
        drun.result,
        mu_tau,
        probes,
        anchors,
        (traj_s, traj_t),
        root.fork("bridges"),
        sigma=sigma,
        eps_path=knobs["eps_path"],
        c_k=knobs["c_k"],
        safety=knobs["safety"],
        n_projections=run["surrogate"]["n_projections"],
        lipschitz_probes=knobs["lipschitz_probes"],
        perturb_scale=knobs["perturb_scale"],
    )
    check = exchangeability_check(report)
    _write_json(
        os.path.join(out_dir, "bridges.json"),
        {
            "delta_hat": report.delta_hat,
            "b_dm_w1": report.b_dm_w1,
            "b_dm_mmd": report.b_dm_mmd,
            "b_gm": report.b_gm,
            "b_tm": report.b_tm,
            "constants": report.constants,
            "exchangeability": {"holds": check.holds, "margins": check.margins},
            "config": _config_json(cfg),
            "method": run["method"],
            "ipc": knobs["ipc"],
            "seed": run["seed"],
        },
    )


# -- entry point ---------------------------------------------------------------


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="distillab",
        description="Distillation laws laboratory: distill, scaling, coverage, bridges.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("distill", "scaling", "coverage", "bridges"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run-config path")
        p.add_argument("--out", help="output directory (overrides config)")
        if name in ("scaling", "coverage"):
            p.add_argument("--mode", choices=GAP_MODES, help="gap mode override")
        if name == "coverage":
            p.add_argument("--workers", type=int, help="task-grid worker count")
            p.add_argument("--eps0", type=float, help="target gap for the K_min section")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run = parse_runconfig(
            raw,
            args.command,
            mode_override=getattr(args, "mode", None),
            seed_override=os.environ.get("DISTILL_LAWLAB_SEED"),
        )
        out_dir = args.out or run["out"]
        if not out_dir:
            raise ConfigError("config.out: missing (or pass --out)")
        workers = getattr(args, "workers", None)
        if workers is not None and workers < 1:
            raise ConfigError("--workers: must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        os.makedirs(out_dir, exist_ok=True)
        if args.command == "distill":
            cmd_distill(run, out_dir)
        elif args.command == "scaling":
            cmd_scaling(run, out_dir)
        elif args.command == "coverage":
            cmd_coverage(run, out_dir, workers or os.cpu_count() or 1, getattr(args, "eps0", None))
        else:
            cmd_bridges(run, out_dir)
    except (DistillabError, ValueError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
