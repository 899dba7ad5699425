"""Stochastic and exhaustive reference implementations of the smoothed vote.

These are the oracles the analytic certifier is validated against: a
counter-based Monte Carlo sampler with an exact binomial confidence bound,
and exact enumeration of the product flip measure for small instances. The
production certification path never samples; this module exists to check it.

Sampling uses the Philox counter generator with a fixed per-sample stride,
so sample i depends only on (seed, i) and results are identical regardless
of batching or worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta as beta_dist

from .data import LabelVector, SmoothingConfig
from .errors import ValidationError
from .regression import AlphaVector, as_alpha_array

ENUM_GUARD = 2**25


def _as_labels(y) -> np.ndarray:
    return y.labels if isinstance(y, LabelVector) else np.asarray(y, dtype=np.int64)


# ---------------------------------------------------------------------------
# counter-based sampling

def _stride(n: int) -> int:
    # Philox advances in 4-output counter blocks; keep rows block-aligned
    return ((2 * n + 3) // 4) * 4


def _uniform_rows(seed: int, start: int, count: int, n: int) -> np.ndarray:
    """count-by-2n uniforms; row j is sample start+j's private stream."""
    stride = _stride(n)
    bg = np.random.Philox(key=int(seed) & (2**64 - 1))
    bg.advance(start * (stride // 4))
    u = np.random.Generator(bg).random(count * stride)
    return u.reshape(count, stride)[:, : 2 * n]


def _flip_rows(lab: np.ndarray, u: np.ndarray, q: float, K: int) -> np.ndarray:
    """Apply one flip decision + resample uniform pair per coordinate."""
    n = lab.shape[0]
    flip = u[:, :n] < q
    if K == 2:
        flipped = 1 - lab
    else:
        pick = np.minimum((u[:, n:] * (K - 1)).astype(np.int64), K - 2)
        flipped = pick + (pick >= lab)
    return np.where(flip, flipped, lab)


def sample_labels(
    y: LabelVector | np.ndarray, q: float, K: int, seed: int
) -> LabelVector:
    """One draw of the flip measure: keep each label w.p. 1-q, else resample
    uniformly among the other K-1 classes. Deterministic given the seed."""
    lab = _as_labels(y)
    if lab.size and lab.max() >= K:
        raise ValidationError(f"label {lab.max()} out of range for K={K}")
    u = _uniform_rows(seed, 0, 1, lab.shape[0])
    return LabelVector(_flip_rows(lab, u, q, K)[0])


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo vote with a one-sided exact binomial confidence bound.

    vote_fraction is the raw fraction of samples voting g_hat (the point
    estimate the bound is built from).
    """

    g_hat: int
    G_bound: float
    N: int
    delta: float
    abstained: bool
    vote_fraction: float = 0.0


def clopper_pearson_lower(successes: int, N: int, delta: float) -> float:
    """Exact binomial lower bound holding w.p. >= 1 - delta."""
    if successes <= 0:
        return 0.0
    return float(beta_dist.ppf(delta, successes, N - successes + 1))


def clopper_pearson_upper(successes: int, N: int, delta: float) -> float:
    if successes >= N:
        return 1.0
    return float(beta_dist.ppf(1.0 - delta, successes + 1, N - successes))


def mc_estimate(
    alpha: AlphaVector | np.ndarray,
    y: LabelVector | np.ndarray,
    cfg: SmoothingConfig,
    N: int,
    delta: float,
    seed: int,
) -> McEstimate:
    """Majority vote over N sampled label vectors plus a confidence bound.

    Binary: the bound is on the class-1 measure, lower when the vote is 1 and
    upper when it is 0. Multi-class: a lower bound on the modal class's
    measure. Abstains when the bound does not place the voted class past 1/2.
    """
    if N < 1:
        raise ValidationError(f"N must be >= 1, got {N}")
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must be in (0, 1), got {delta}")
    a = as_alpha_array(alpha)
    lab = _as_labels(y)
    counts = np.zeros(cfg.K, dtype=np.int64)
    batch = 8192
    for start in range(0, N, batch):
        count = min(batch, N - start)
        u = _uniform_rows(seed, start, count, lab.shape[0])
        rows = _flip_rows(lab, u, cfg.q, cfg.K)
        if cfg.K == 2:
            votes = (rows @ a >= 0.5).astype(np.int64)
        else:
            scores = np.stack([(rows == c) @ a for c in range(cfg.K)], axis=1)
            votes = np.argmax(scores, axis=1)
        counts += np.bincount(votes, minlength=cfg.K)
    g_hat = int(np.argmax(counts))
    if cfg.K == 2:
        ones = int(counts[1])
        if g_hat == 1:
            G_bound = clopper_pearson_lower(ones, N, delta)
            abstained = not G_bound > 0.5
        else:
            G_bound = clopper_pearson_upper(ones, N, delta)
            abstained = not G_bound < 0.5
    else:
        G_bound = clopper_pearson_lower(int(counts[g_hat]), N, delta)
        abstained = not G_bound > 0.5
    return McEstimate(
        g_hat=g_hat,
        G_bound=G_bound,
        N=N,
        delta=delta,
        abstained=abstained,
        vote_fraction=float(counts[g_hat] / N),
    )


# ---------------------------------------------------------------------------
# exact enumeration

@dataclass(frozen=True)
class TailProbs:
    """Exact score-threshold masses under the product flip measure."""

    ge: float  # P(alpha^T yhat >= 1/2)
    gt: float
    le: float
    lt: float


def _half_enumeration(alpha: np.ndarray, p_one: np.ndarray):
    sums = np.zeros(1)
    probs = np.ones(1)
    for j in range(alpha.shape[0]):
        sums = np.concatenate([sums, sums + alpha[j]])
        probs = np.concatenate([probs * (1.0 - p_one[j]), probs * p_one[j]])
    return sums, probs


def exact_binary_tails(
    alpha: AlphaVector | np.ndarray, y: LabelVector | np.ndarray, q: float
) -> TailProbs:
    """Exact threshold masses by meet-in-the-middle over all 2^n label draws.

    Each tail is a direct sum of positive terms (no complementation), so the
    tiny side keeps full relative precision.
    """
    a = as_alpha_array(alpha)
    lab = _as_labels(y)
    n = a.shape[0]
    if 2**n > ENUM_GUARD:
        raise ValidationError(f"instance too large to enumerate (2^{n})")
    p_one = np.where(lab == 1, 1.0 - q, q)
    h = n // 2
    sA, pA = _half_enumeration(a[:h], p_one[:h])
    sB, pB = _half_enumeration(a[h:], p_one[h:])
    order = np.argsort(sB, kind="stable")
    sB = sB[order]
    pB = pB[order]
    suffix = np.concatenate([np.cumsum(pB[::-1])[::-1], [0.0]])
    prefix = np.concatenate([[0.0], np.cumsum(pB)])
    left = np.searchsorted(sB, 0.5 - sA, side="left")
    right = np.searchsorted(sB, 0.5 - sA, side="right")
    return TailProbs(
        ge=float(pA @ suffix[left]),
        gt=float(pA @ suffix[right]),
        le=float(pA @ prefix[right]),
        lt=float(pA @ prefix[left]),
    )


def exact_class_probs(
    alpha: AlphaVector | np.ndarray,
    y: LabelVector | np.ndarray,
    K: int,
    q: float,
) -> np.ndarray:
    """P(argmax_c score_c = c) for each class by K^n enumeration (ties to the
    lowest class index)."""
    a = as_alpha_array(alpha)
    lab = _as_labels(y)
    n = a.shape[0]
    total = K**n
    if total > ENUM_GUARD:
        raise ValidationError(f"instance too large to enumerate ({K}^{n})")
    coord_probs = np.full((n, K), q / (K - 1))
    coord_probs[np.arange(n), lab] = 1.0 - q
    powers = K ** np.arange(n, dtype=np.int64)
    out = np.zeros(K)
    chunk = 1 << 16
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % K
        pr = np.prod(coord_probs[np.arange(n)[None, :], digits], axis=1)
        scores = np.stack([((digits == c) * a).sum(axis=1) for c in range(K)], axis=1)
        winners = np.argmax(scores, axis=1)
        out += np.bincount(winners, weights=pr, minlength=K)
    return out


def exact_pairwise_prob(
    alpha: AlphaVector | np.ndarray,
    y: LabelVector | np.ndarray,
    i: int,
    i_prime: int,
    K: int,
    q: float,
) -> float:
    """Exact P(score_i < score_i') under the flip measure, strict inequality."""
    a = as_alpha_array(alpha)
    lab = _as_labels(y)
    n = a.shape[0]
    total = K**n
    if total > ENUM_GUARD:
        raise ValidationError(f"instance too large to enumerate ({K}^{n})")
    coord_probs = np.full((n, K), q / (K - 1))
    coord_probs[np.arange(n), lab] = 1.0 - q
    powers = K ** np.arange(n, dtype=np.int64)
    out = 0.0
    chunk = 1 << 16
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % K
        pr = np.prod(coord_probs[np.arange(n)[None, :], digits], axis=1)
        gap = ((digits == i) * a).sum(axis=1) - ((digits == i_prime) * a).sum(axis=1)
        out += float(pr[gap < 0].sum())
    return out


def exact_g(
    alpha: AlphaVector | np.ndarray,
    y: LabelVector | np.ndarray,
    cfg: SmoothingConfig,
) -> tuple[int, float]:
    """Exact smoothed vote and the winning class's measure.

    Binary: class 1 wins iff P(alpha^T yhat >= 1/2) >= 1/2. Multi-class: the
    class of largest exact measure (ties to the lowest index).
    """
    if cfg.K == 2:
        tails = exact_binary_tails(alpha, y, cfg.q)
        if tails.ge >= 0.5:
            return 1, tails.ge
        return 0, tails.lt
    probs = exact_class_probs(alpha, y, cfg.K, cfg.q)
    g = int(np.argmax(probs))
    return g, float(probs[g])
