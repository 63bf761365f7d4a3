"""Deterministic numeric substrate: seeded splittable RNG streams, ordinary
least squares, and central finite differences.

Everything here is a pure function of its inputs; RngStream is the only
source of randomness in the package and is reproducible across processes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit, NonFiniteProbe

__all__ = [
    "RngStream",
    "LawFit",
    "rng_fork",
    "ols_fit",
    "central_diff_grad",
]


@dataclass(frozen=True)
class RngStream:
    """A splittable random stream identified by (seed, fork path).

    Two streams with identical (seed, path) yield identical draw sequences on
    any machine; forking with distinct labels yields independent streams.
    Call generator() exactly once per stream: every call restarts the
    sequence from the beginning, so distinct draw sites should each fork
    their own child stream first.
    """

    seed: int
    path: tuple[str, ...] = ()

    def fork(self, label: str) -> "RngStream":
        return RngStream(self.seed, self.path + (str(label),))

    def generator(self) -> np.random.Generator:
        # Label-hash derivation: the (seed, path) pair is digested so child
        # streams are decorrelated regardless of label spelling.
        digest = hashlib.sha256(self._key()).digest()
        return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "big")))

    def _key(self) -> bytes:
        parts = [str(self.seed).encode()]
        for label in self.path:
            parts.append(label.encode())
        return b"\x1f".join(parts)

    def describe(self) -> str:
        return f"{self.seed}:" + "/".join(self.path)


def rng_fork(stream: RngStream, label: str) -> RngStream:
    """Child stream with path = parent path + [label]; parent unchanged."""
    return stream.fork(label)


@dataclass(frozen=True)
class LawFit:
    """A fitted line y = slope*x + intercept with its goodness of fit."""

    slope: float
    intercept: float
    r_squared: float
    n_points: int


def ols_fit(xs, ys) -> LawFit:
    """Least-squares line through (xs, ys).

    r_squared = 1 - SS_res/SS_tot, with the convention r_squared = 1 when the
    ys are constant and fitted exactly (SS_tot = 0 would otherwise divide by
    zero). Raises DegenerateFit for fewer than 2 points or constant xs.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateFit("xs and ys must be equal-length 1-D sequences")
    if x.size < 2:
        raise DegenerateFit("need at least 2 points")
    if np.ptp(x) == 0.0:
        raise DegenerateFit("xs are all equal")
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(y - ym, y - ym))
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return LawFit(slope, intercept, float(r2), int(x.size))


def central_diff_grad(f, x, h: float | None = None) -> np.ndarray:
    """Central finite-difference gradient of a scalar function at x.

    Entry i is (f(x + h e_i) - f(x - h e_i)) / (2h). The default step
    h = 1e-4 * (1 + max|x_i|) balances truncation against round-off in
    double precision. Raises NonFiniteProbe if any evaluation is not finite.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("x must be nonempty")
    if h is None:
        h = 1e-4 * (1.0 + float(np.max(np.abs(x))))
    if h <= 0:
        raise ValueError("h must be positive")
    grad = np.empty(x.size, dtype=float)
    flat = x.reshape(-1)
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + h
        up = f(probe.reshape(x.shape))
        probe[i] = flat[i] - h
        down = f(probe.reshape(x.shape))
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteProbe(f"non-finite evaluation at coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(x.shape)
