"""Datasets as weighted empirical measures.

A WeightedDataset is an immutable (features, labels, weights) triple whose
weights sum to 1; it stands in for any empirical measure in the package
(real data, held-out test sets, synthetic sets viewed as measures).
Constructors: a Gaussian-mixture generator, an IDX reader, and a stratified
splitter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BadMagic, BadShape, DimMismatch, EmptyPart, TruncatedFile
from .numkit import RngStream

__all__ = [
    "LabeledPoint",
    "WeightedDataset",
    "from_arrays",
    "make_gaussian_mixture",
    "load_idx",
    "split",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class LabeledPoint(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class WeightedDataset:
    """Weighted labeled points: an empirical measure over (feature, label).

    weights are nonnegative and sum to 1 within 1e-12. Instances are
    immutable after construction and safe to share across workers.
    """

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        labels = np.array(self.labels, dtype=np.int64)
        weights = np.array(self.weights, dtype=float)
        if features.ndim != 2:
            raise BadShape("features must be a 2-D array (n, dim)")
        n = features.shape[0]
        if labels.shape != (n,) or weights.shape != (n,):
            raise DimMismatch("labels/weights lengths disagree with features")
        if n == 0:
            raise BadShape("dataset must be nonempty")
        if self.num_classes < 1:
            raise BadShape("num_classes must be >= 1")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise DimMismatch("labels must lie in [0, num_classes)")
        if not np.all(np.isfinite(features)):
            raise BadShape("features must be finite")
        if weights.min() < 0 or abs(weights.sum() - 1.0) > 1e-12:
            raise BadShape("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)
        for name in ("features", "labels", "weights"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def point(self, i: int) -> LabeledPoint:
        return LabeledPoint(self.features[i], int(self.labels[i]))

    def subset(self, indices) -> "WeightedDataset":
        """Sub-measure on the given indices, re-normalized to weight 1."""
        indices = np.asarray(indices, dtype=np.int64)
        w = self.weights[indices]
        total = w.sum()
        if total <= 0:
            raise BadShape("subset has zero total weight")
        return WeightedDataset(
            self.features[indices], self.labels[indices], w / total, self.num_classes
        )

    def class_indices(self, c: int) -> np.ndarray:
        return np.nonzero(self.labels == c)[0]


def from_arrays(features, labels, num_classes=None, weights=None) -> WeightedDataset:
    """Uniform-weight dataset from raw arrays (helper constructor)."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    if weights is None:
        n = features.shape[0]
        weights = np.full(n, 1.0 / n)
    return WeightedDataset(features, labels, weights, num_classes)


def _class_directions(num_classes: int, dim: int) -> np.ndarray:
    # Unit directions on the circle in the first two coordinates, spaced
    # 60 degrees apart (2pi/C once C exceeds 6). Adjacent chords then have
    # length 1, so class_separation equals the distance between adjacent
    # class means and separation/noise_sigma controls the Bayes error.
    if dim < 1:
        raise BadShape("dim must be >= 1")
    if num_classes == 1:
        out = np.zeros((1, dim))
        out[0, 0] = 1.0
        return out
    if dim < 2:
        raise BadShape("dim 1 supports at most 1 class mean direction")
    out = np.zeros((num_classes, dim))
    angles = 2.0 * np.pi * np.arange(num_classes) / max(num_classes, 6)
    out[:, 0] = np.cos(angles)
    out[:, 1] = np.sin(angles)
    return out


def make_gaussian_mixture(
    num_classes: int,
    dim: int,
    n_per_class: int,
    class_separation: float,
    noise_sigma: float,
    rng: RngStream,
) -> WeightedDataset:
    """Isotropic Gaussian blobs, one per class, uniform weights.

    Class c is centered at class_separation * u_c for fixed unit directions
    u_c determined by (num_classes, dim) alone, so geometry is reproducible
    and separation-controllable.
    """
    if num_classes < 1 or n_per_class < 1:
        raise BadShape("counts must be >= 1")
    if noise_sigma <= 0:
        raise BadShape("noise_sigma must be > 0")
    directions = _class_directions(num_classes, dim)
    gen = rng.generator()
    feats = np.empty((num_classes * n_per_class, dim))
    labels = np.empty(num_classes * n_per_class, dtype=np.int64)
    for c in range(num_classes):
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        feats[block] = class_separation * directions[c] + noise_sigma * gen.standard_normal(
            (n_per_class, dim)
        )
        labels[block] = c
    return from_arrays(feats, labels, num_classes)


def _read_exact(fh, count: int, path: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFile(f"{path}: expected {count} more bytes, got {len(data)}")
    return data


def load_idx(images_path, labels_path) -> WeightedDataset:
    """Read an IDX image/label file pair into a uniform-weight dataset.

    Big-endian format: images are magic 0x00000803 then [count, rows, cols]
    as u32 then count*rows*cols pixel bytes; labels are magic 0x00000801
    then [count] then count label bytes. Pixels are scaled to [0, 1].
    """
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, str(images_path)))
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagic(f"{images_path}: magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
        raw = _read_exact(fh, count * rows * cols, str(images_path))
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, str(labels_path)))
        if magic != IDX_LABELS_MAGIC:
            raise BadMagic(f"{labels_path}: magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")
        raw = _read_exact(fh, label_count, str(labels_path))
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if label_count != count:
        raise DimMismatch(f"{count} images vs {label_count} labels")
    return from_arrays(pixels.astype(float) / 255.0, labels)


def split(ds: WeightedDataset, fraction: float, rng: RngStream):
    """Class-stratified disjoint split into (first, second) parts.

    The first part receives floor(fraction * n_c) points of each class c
    (shuffled by rng); both parts are re-normalized to total weight 1.
    Raises EmptyPart if any class would be empty on either side.
    """
    if not (0.0 < fraction < 1.0):
        raise BadShape("fraction must lie strictly between 0 and 1")
    gen = rng.generator()
    first_idx = []
    second_idx = []
    for c in range(ds.num_classes):
        idx = ds.class_indices(c)
        take = int(fraction * idx.size)
        if take < 1 or take >= idx.size:
            raise EmptyPart(f"class {c} would be empty on one side")
        perm = gen.permutation(idx.size)
        first_idx.append(idx[perm[:take]])
        second_idx.append(idx[perm[take:]])
    first = np.sort(np.concatenate(first_idx))
    second = np.sort(np.concatenate(second_idx))
    return ds.subset(first), ds.subset(second)
