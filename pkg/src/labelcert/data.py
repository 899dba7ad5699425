"""Domain types, dataset file I/O, and linear dimensionality reduction.

Feature files are CSV with one row per example (an optional header row is
detected by a non-numeric first line and skipped). Label files are plain
text, one integer per line. All file I/O is UTF-8.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class FeatureMatrix:
    """Real n-by-k matrix of feature activations, one row per example."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"feature matrix must be at least 1x1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise ValidationError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Integer class labels, one per training example."""

    labels: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.labels)
        if a.ndim != 1:
            raise ValidationError(f"labels must be 1-D, got shape {a.shape}")
        if a.size and not np.issubdtype(a.dtype, np.integer):
            if not np.all(a == np.floor(a)):
                raise ValidationError("labels must be integers")
        a = a.astype(np.int64)
        if a.size and a.min() < 0:
            raise ValidationError(f"negative label {a.min()}")
        object.__setattr__(self, "labels", a)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class SmoothingConfig:
    """Label-flip noise level q, class count K, and extended-precision width.

    Each training label is independently kept with probability 1-q and
    otherwise resampled uniformly among the other K-1 classes. Certification
    requires q < (K-1)/K strictly, so that one flip carries positive
    divergence.
    """

    q: float
    K: int = 2
    precision_bits: int = 256

    def __post_init__(self):
        if self.K < 2:
            raise ValidationError(f"K must be >= 2, got {self.K}")
        hi = (self.K - 1) / self.K
        if not (0.0 < self.q < hi):
            raise ValidationError(
                f"q must lie strictly in (0, {hi:g}) for K={self.K}, got {self.q}"
            )
        if self.precision_bits < 53:
            raise ValidationError(
                f"precision_bits must be >= 53, got {self.precision_bits}"
            )


@dataclass(frozen=True)
class Dataset:
    features: FeatureMatrix
    labels: LabelVector
    K: int = 2

    def __post_init__(self):
        if self.features.n != len(self.labels):
            raise ValidationError(
                f"feature rows ({self.features.n}) != label count ({len(self.labels)})"
            )
        lab = self.labels.labels
        if lab.size and lab.max() >= self.K:
            raise ValidationError(f"label {lab.max()} out of range for K={self.K}")
        if np.unique(lab).size < 2:
            warnings.warn("dataset contains a single class", stacklevel=2)

    @property
    def n(self) -> int:
        return self.features.n

    @property
    def k(self) -> int:
        return self.features.k


def one_hot(labels: np.ndarray | LabelVector, K: int) -> np.ndarray:
    """n-by-K {0,1} matrix with row i indicating class labels[i]."""
    lab = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    out = np.zeros((lab.shape[0], K))
    out[np.arange(lab.shape[0]), lab] = 1.0
    return out


def _looks_numeric(fields: list[str]) -> bool:
    for f in fields:
        try:
            float(f)
        except ValueError:
            return False
    return True


def parse_feature_csv(path: str) -> FeatureMatrix:
    rows: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty feature file")
    start = 0
    first = [f.strip() for f in lines[0].split(",")]
    if not _looks_numeric(first):
        start = 1  # header row
    if start >= len(lines):
        raise ValidationError(f"{path}: no data rows after header")
    width = None
    for idx, ln in enumerate(lines[start:], start=start + 1):
        fields = [f.strip() for f in ln.split(",")]
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ValidationError(
                f"{path}:{idx}: expected {width} columns, got {len(fields)}"
            )
        try:
            row = [float(f) for f in fields]
        except ValueError as exc:
            raise ValidationError(f"{path}:{idx}: unparseable value ({exc})") from None
        for j, v in enumerate(row):
            if not math.isfinite(v):
                raise ValidationError(f"{path}:{idx}: non-finite feature in column {j}")
        rows.append(row)
    return FeatureMatrix(np.array(rows))


def parse_label_file(path: str, K: int) -> LabelVector:
    labels: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for idx, ln in enumerate(fh, start=1):
            s = ln.strip()
            if not s:
                continue
            try:
                v = int(s)
            except ValueError:
                raise ValidationError(f"{path}:{idx}: unparseable label {s!r}") from None
            if not 0 <= v < K:
                raise ValidationError(f"{path}:{idx}: label {v} out of range for K={K}")
            labels.append(v)
    return LabelVector(np.array(labels, dtype=np.int64))


def load_dataset(features_path: str, labels_path: str, K: int = 2) -> Dataset:
    """Load and validate a (features CSV, labels text) pair."""
    features = parse_feature_csv(features_path)
    labels = parse_label_file(labels_path, K)
    return Dataset(features, labels, K)


def save_dataset(dataset: Dataset, features_path: str, labels_path: str) -> None:
    with open(features_path, "w", encoding="utf-8") as fh:
        for row in dataset.features.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(labels_path, "w", encoding="utf-8") as fh:
        for v in dataset.labels.labels:
            fh.write(f"{int(v)}\n")


def pca_reduce(
    features: FeatureMatrix, target_dim: int
) -> tuple[FeatureMatrix, np.ndarray]:
    """Project centered rows onto the top principal directions.

    Returns the reduced n-by-target_dim matrix and the k-by-target_dim
    projection with orthonormal columns. The projection applies to rows
    centered by the training mean (features.values.mean(axis=0)); centering
    only, no whitening.
    """
    X = features.values
    n, k = X.shape
    if not 1 <= target_dim <= min(n, k):
        raise ValidationError(
            f"target_dim must be in [1, {min(n, k)}], got {target_dim}"
        )
    Xc = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    proj = vt[:target_dim].T
    # deterministic sign: largest-magnitude loading of each direction positive
    for j in range(proj.shape[1]):
        i = int(np.argmax(np.abs(proj[:, j])))
        if proj[i, j] < 0:
            proj[:, j] = -proj[:, j]
    return FeatureMatrix(Xc @ proj), proj
