"""Small differentiable model zoo with exact manual gradients.

Two built-in kinds: softmax_linear (multinomial logistic regression) and
mlp1 (one tanh hidden layer). Loss is cross-entropy throughout. Per-sample
loss/grad are the reference semantics; batched helpers (mean_grad, risk,
accuracy) are vectorized but agree exactly with the weighted per-sample
definitions.

register_model_kind() admits custom per-sample losses (e.g. low-dimensional
probe objectives for dynamics tests); custom kinds plug into the same
step/train machinery but have no classifier surface unless they provide
logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import BadShape, DimMismatch
from .measures import LabeledPoint, WeightedDataset
from .numkit import RngStream
from .updates import field_apply

__all__ = [
    "ModelSpec",
    "ModelOps",
    "LipschitzEstimates",
    "register_model_kind",
    "init_params",
    "loss",
    "grad",
    "predict_logits",
    "mean_grad",
    "risk",
    "accuracy",
    "estimate_lipschitz",
]

BUILTIN_KINDS = ("softmax_linear", "mlp1")


class ModelOps(NamedTuple):
    """Hooks for a registered custom model kind (per-sample semantics)."""

    param_dim: Callable[["ModelSpec"], int]
    loss: Callable[["ModelSpec", np.ndarray, np.ndarray, int], float]
    grad: Callable[["ModelSpec", np.ndarray, np.ndarray, int], np.ndarray]
    logits: Optional[Callable[["ModelSpec", np.ndarray, np.ndarray], np.ndarray]] = None
    init: Optional[Callable[["ModelSpec", np.random.Generator], np.ndarray]] = None


_CUSTOM_KINDS: dict[str, ModelOps] = {}


def register_model_kind(kind: str, ops: ModelOps) -> None:
    if kind in BUILTIN_KINDS:
        raise ValueError(f"{kind} is a built-in kind")
    _CUSTOM_KINDS[kind] = ops


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in BUILTIN_KINDS and self.kind not in _CUSTOM_KINDS:
            raise BadShape(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.num_classes < 1:
            raise BadShape("input_dim and num_classes must be >= 1")
        if self.kind == "mlp1" and self.hidden_dim < 1:
            raise BadShape("mlp1 requires hidden_dim >= 1")

    @property
    def param_dim(self) -> int:
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.kind == "softmax_linear":
            return c * (d + 1)
        if self.kind == "mlp1":
            return h * (d + 1) + c * (h + 1)
        return _CUSTOM_KINDS[self.kind].param_dim(self)


def _check_theta(spec: ModelSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.param_dim,):
        raise DimMismatch(f"theta has shape {theta.shape}, expected ({spec.param_dim},)")
    return theta


def _unpack_linear(spec: ModelSpec, theta: np.ndarray):
    d, c = spec.input_dim, spec.num_classes
    return theta[: c * d].reshape(c, d), theta[c * d :]


def _unpack_mlp(spec: ModelSpec, theta: np.ndarray):
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    o1 = h * d
    o2 = o1 + h
    o3 = o2 + c * h
    return (
        theta[:o1].reshape(h, d),
        theta[o1:o2],
        theta[o2:o3].reshape(c, h),
        theta[o3:],
    )


def init_params(spec: ModelSpec, rng: RngStream) -> np.ndarray:
    """Fresh parameters: weights ~ N(0, 1/fan_in) per layer, biases 0."""
    gen = rng.generator()
    if spec.kind == "softmax_linear":
        d, c = spec.input_dim, spec.num_classes
        theta = np.zeros(spec.param_dim)
        theta[: c * d] = gen.standard_normal(c * d) / np.sqrt(d)
        return theta
    if spec.kind == "mlp1":
        d, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
        theta = np.zeros(spec.param_dim)
        theta[: h * d] = gen.standard_normal(h * d) / np.sqrt(d)
        theta[h * d + h : h * d + h + c * h] = gen.standard_normal(c * h) / np.sqrt(h)
        return theta
    ops = _CUSTOM_KINDS[spec.kind]
    if ops.init is not None:
        return np.asarray(ops.init(spec, gen), dtype=float)
    return np.zeros(spec.param_dim)


def predict_logits(spec: ModelSpec, theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Class logits for a (n, input_dim) feature block."""
    theta = _check_theta(spec, theta)
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[1] != spec.input_dim:
        raise DimMismatch("feature dim disagrees with spec.input_dim")
    if spec.kind == "softmax_linear":
        w, b = _unpack_linear(spec, theta)
        return features @ w.T + b
    if spec.kind == "mlp1":
        w1, b1, w2, b2 = _unpack_mlp(spec, theta)
        hidden = np.tanh(features @ w1.T + b1)
        return hidden @ w2.T + b2
    ops = _CUSTOM_KINDS[spec.kind]
    if ops.logits is None:
        raise DimMismatch(f"kind {spec.kind!r} has no classifier surface")
    return ops.logits(spec, theta, features)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss(spec: ModelSpec, theta: np.ndarray, z: LabeledPoint) -> float:
    """Cross-entropy of the softmax output at z's label."""
    x = np.asarray(z.features, dtype=float)
    y = int(z.label)
    if y < 0 or y >= spec.num_classes:
        raise DimMismatch("label out of range")
    if spec.kind in BUILTIN_KINDS:
        logits = predict_logits(spec, theta, x[None, :])
        return float(-_log_softmax(logits)[0, y])
    theta = _check_theta(spec, theta)
    return float(_CUSTOM_KINDS[spec.kind].loss(spec, theta, x, y))


def grad(spec: ModelSpec, theta: np.ndarray, z: LabeledPoint) -> np.ndarray:
    """Exact gradient of loss(spec, theta, z) with respect to theta."""
    x = np.asarray(z.features, dtype=float)
    y = int(z.label)
    if spec.kind in BUILTIN_KINDS:
        w = np.ones(1)
        return _builtin_mean_grad(spec, _check_theta(spec, theta), x[None, :], np.array([y]), w)
    theta = _check_theta(spec, theta)
    return np.asarray(_CUSTOM_KINDS[spec.kind].grad(spec, theta, x, y), dtype=float)


def _builtin_mean_grad(spec, theta, features, labels, weights) -> np.ndarray:
    # Weighted mean of per-sample cross-entropy gradients, as one matmul
    # block per layer.
    probs = _softmax(predict_logits(spec, theta, features))
    delta = probs
    delta[np.arange(labels.size), labels] -= 1.0
    delta *= weights[:, None]
    if spec.kind == "softmax_linear":
        gw = delta.T @ features
        gb = delta.sum(axis=0)
        return np.concatenate([gw.ravel(), gb])
    w1, b1, w2, b2 = _unpack_mlp(spec, theta)
    hidden = np.tanh(features @ w1.T + b1)
    gw2 = delta.T @ hidden
    gb2 = delta.sum(axis=0)
    dhidden = delta @ w2
    dpre = (1.0 - hidden * hidden) * dhidden
    gw1 = dpre.T @ features
    gb1 = dpre.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def mean_grad(spec, theta, features, labels, weights) -> np.ndarray:
    """Weighted mean gradient over a batch; weights need not sum to 1
    (they are normalized here)."""
    theta = _check_theta(spec, theta)
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        raise BadShape("batch weights must have positive total")
    weights = weights / total
    if spec.kind in BUILTIN_KINDS:
        return _builtin_mean_grad(spec, theta, features, labels, weights)
    ops = _CUSTOM_KINDS[spec.kind]
    out = np.zeros(spec.param_dim)
    for x, y, w in zip(features, labels, weights):
        out += w * np.asarray(ops.grad(spec, theta, x, int(y)), dtype=float)
    return out


def dataset_mean_grad(spec, theta, ds: WeightedDataset) -> np.ndarray:
    return mean_grad(spec, theta, ds.features, ds.labels, ds.weights)


def risk(spec: ModelSpec, theta: np.ndarray, ds: WeightedDataset) -> float:
    """Weighted mean cross-entropy over the dataset."""
    if spec.kind in BUILTIN_KINDS:
        logp = _log_softmax(predict_logits(spec, theta, ds.features))
        picked = logp[np.arange(len(ds)), ds.labels]
        return float(-(ds.weights * picked).sum())
    return float(
        sum(w * loss(spec, theta, ds.point(i)) for i, w in enumerate(ds.weights))
    )


def accuracy(spec: ModelSpec, theta: np.ndarray, ds: WeightedDataset) -> float:
    """Weight-weighted fraction of argmax-correct predictions.

    Argmax ties break toward the smaller class index.
    """
    logits = predict_logits(spec, theta, ds.features)
    if logits.shape[1] != spec.num_classes:
        raise DimMismatch("logit width disagrees with num_classes")
    preds = np.argmax(logits, axis=1)
    return float((ds.weights * (preds == ds.labels)).sum())


@dataclass(frozen=True)
class LipschitzEstimates:
    """Empirical Lipschitz constants (lower bounds of the true ones)."""

    l_theta: float
    l_z: float
    probes_used: int


def estimate_lipschitz(
    spec: ModelSpec,
    config,
    ds: WeightedDataset,
    n_probes: int,
    perturb_scale: float,
    rng: RngStream,
) -> LipschitzEstimates:
    """Empirical Lipschitz constants of the preconditioned mean update.

    l_theta is the max over probe pairs (theta, theta') of
    ||P gbar(theta) - P gbar(theta')|| / ||theta - theta'|| with gbar the
    dataset mean gradient and P the stateless preconditioner; l_z is the
    analogous max over feature perturbations of the per-sample gradient at
    fixed theta. Both are max-over-samples statistics: lower bounds of the
    true constants that grow (weakly) with more probes.
    """
    if n_probes < 2:
        raise BadShape("need at least 2 probes")
    precond = config.preconditioner
    thetas = [
        init_params(spec, rng.fork(f"theta{i}")) for i in range(n_probes)
    ]
    fields = [field_apply(precond, dataset_mean_grad(spec, t, ds)) for t in thetas]
    l_theta = 0.0
    for i in range(n_probes):
        for j in range(i + 1, n_probes):
            gap = float(np.linalg.norm(thetas[i] - thetas[j]))
            if gap == 0.0:
                continue
            ratio = float(np.linalg.norm(fields[i] - fields[j])) / gap
            l_theta = max(l_theta, ratio)

    gen = rng.fork("data").generator()
    l_z = 0.0
    n_theta_probes = min(8, n_probes)
    for i in range(n_probes):
        theta = thetas[i % n_theta_probes]
        idx = int(gen.integers(len(ds)))
        z = ds.point(idx)
        shift = perturb_scale * gen.standard_normal(ds.dim)
        gap = float(np.linalg.norm(shift))
        if gap == 0.0:
            continue
        z2 = LabeledPoint(z.features + shift, z.label)
        num = float(np.linalg.norm(grad(spec, theta, z) - grad(spec, theta, z2)))
        l_z = max(l_z, num / gap)
    return LipschitzEstimates(float(l_theta), float(l_z), int(n_probes))
