"""Regularized least-squares precomputation and per-test-point kernel weights.

Training reduces to one symmetric positive-definite solve: M = X (X^T X + lam I)^-1
is computed once, after which the weight vector for a test point x is
alpha = M x, and the model's score on any label vector y is alpha^T y.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import FeatureMatrix, LabelVector, one_hot
from .errors import ValidationError

ARTIFACT_FORMAT = "labelcert-model"
ARTIFACT_VERSION = 1


@dataclass(frozen=True)
class RidgeModel:
    """Precomputed training artifact: M = X (X^T X + lam I)^-1 plus diagnostics."""

    M: np.ndarray
    lam: float
    sigma2_hat: float
    kappa: float

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        if M.ndim != 2 or not np.all(np.isfinite(M)):
            raise ValidationError("M must be a finite 2-D matrix")
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.kappa < 1:
            raise ValidationError(f"condition number must be >= 1, got {self.kappa}")
        object.__setattr__(self, "M", M)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def k(self) -> int:
        return self.M.shape[1]


@dataclass(frozen=True)
class AlphaVector:
    """Kernel weights for one test point; the score on labels y is alpha^T y."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.ndim != 1 or not np.all(np.isfinite(a)):
            raise ValidationError("alpha must be a finite 1-D vector")
        object.__setattr__(self, "alpha", a)

    def __len__(self) -> int:
        return self.alpha.shape[0]


def as_alpha_array(alpha: AlphaVector | np.ndarray) -> np.ndarray:
    if isinstance(alpha, AlphaVector):
        return alpha.alpha
    return np.asarray(alpha, dtype=np.float64)


def estimate_lambda(
    X: FeatureMatrix | np.ndarray,
    y: LabelVector | np.ndarray,
    q: float,
) -> tuple[float, float, float]:
    """Regularization heuristic (1+q) * sigma2 * k / (2n) * cond(X^T X).

    sigma2 is the ordinary-least-squares residual variance ||y - X b||^2 / (n-k);
    for a one-hot target matrix it is computed per column and averaged. Requires
    n > k and full column rank, otherwise the caller must supply lambda
    explicitly (or reduce k first, e.g. with pca_reduce).
    """
    Xv = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    yv = y.labels if isinstance(y, LabelVector) else np.asarray(y, dtype=np.float64)
    n, k = Xv.shape
    if n <= k:
        raise ValidationError(
            f"lambda heuristic needs n > k (got n={n}, k={k}): supply lambda "
            "explicitly or reduce the feature dimension (e.g. pca_reduce)"
        )
    targets = yv.astype(np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    beta, _, rank, _ = np.linalg.lstsq(Xv, targets, rcond=None)
    if rank < k:
        raise ValidationError(
            f"X is rank-deficient (rank {rank} < k={k}): supply lambda explicitly "
            "or reduce the feature dimension (e.g. pca_reduce)"
        )
    resid = targets - Xv @ beta
    sigma2 = float(np.mean(np.sum(resid * resid, axis=0) / (n - k)))
    eigs = np.linalg.eigvalsh(Xv.T @ Xv)
    kappa = float(eigs[-1] / eigs[0])
    lam = (1.0 + q) * sigma2 * k / (2.0 * n) * kappa
    return lam, sigma2, kappa


def precompute(X: FeatureMatrix | np.ndarray, lam: float) -> RidgeModel:
    """Build M = X (X^T X + lam I)^-1 via an SPD solve (never an explicit inverse)."""
    Xv = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    n, k = Xv.shape
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    A = Xv.T @ Xv + lam * np.eye(k)
    try:
        cho = scipy.linalg.cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(A)[0])
        raise ValidationError(
            f"X^T X + lambda I is not positive definite "
            f"(smallest eigenvalue {smallest:.6e}); increase lambda"
        ) from None
    M = scipy.linalg.cho_solve(cho, Xv.T).T
    eigs = np.linalg.eigvalsh(Xv.T @ Xv)
    kappa = float(max(eigs[-1] / eigs[0], 1.0)) if eigs[0] > 0 else float("inf")
    return RidgeModel(M=M, lam=float(lam), sigma2_hat=0.0, kappa=kappa)


def train(
    X: FeatureMatrix | np.ndarray,
    y: LabelVector | np.ndarray,
    q: float,
    K: int = 2,
    lam: float | None = None,
) -> RidgeModel:
    """estimate_lambda (unless lam given) followed by precompute."""
    if lam is None:
        yv = y.labels if isinstance(y, LabelVector) else np.asarray(y)
        targets = one_hot(yv, K) if K > 2 else yv
        lam, sigma2, kappa = estimate_lambda(X, targets, q)
        model = precompute(X, lam)
        return RidgeModel(M=model.M, lam=lam, sigma2_hat=sigma2, kappa=kappa)
    return precompute(X, lam)


def alpha_for(model: RidgeModel, test_features: np.ndarray) -> AlphaVector:
    """Kernel weight vector alpha = M x for one test point."""
    x = np.asarray(test_features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.k:
        raise ValidationError(
            f"test feature vector must have length {model.k}, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite test feature")
    return AlphaVector(model.M @ x)


def save_artifact(
    model: RidgeModel, labels: LabelVector, K: int, path: str
) -> None:
    """Write a versioned JSON artifact carrying M, diagnostics, and the
    training labels (certification is a function of the labels, so the
    artifact must include them for a later certify invocation)."""
    doc = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "n": model.n,
        "k": model.k,
        "K": int(K),
        "lambda": model.lam,
        "sigma2_hat": model.sigma2_hat,
        "kappa": model.kappa,
        "labels": [int(v) for v in labels.labels],
        "M": [[float(v) for v in row] for row in model.M],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_artifact(path: str) -> tuple[RidgeModel, LabelVector, int]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != ARTIFACT_FORMAT:
        raise ValidationError(f"{path}: not a {ARTIFACT_FORMAT} file")
    if doc.get("version") != ARTIFACT_VERSION:
        raise ValidationError(f"{path}: unsupported artifact version {doc.get('version')}")
    model = RidgeModel(
        M=np.array(doc["M"], dtype=np.float64),
        lam=float(doc["lambda"]),
        sigma2_hat=float(doc["sigma2_hat"]),
        kappa=float(doc["kappa"]),
    )
    labels = LabelVector(np.array(doc["labels"], dtype=np.int64))
    if model.n != len(labels):
        raise ValidationError(f"{path}: label count does not match M rows")
    return model, labels, int(doc["K"])
