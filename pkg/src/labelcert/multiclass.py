"""Multi-class certification via pairwise tail bounds on one-hot score gaps.

For candidate class i and competitor i', the score gap along one training
row is alpha_j times a three-valued variable (+1, 0, -1 depending on how the
flipped label lands), so P(score_i < score_i') admits the same
one-dimensional log-convex tail treatment as the binary case. Each unordered pair is solved
once: the reverse direction is the same objective at -t, so the sign of the
unconstrained minimizer decides which direction gets an informative bound.
The prediction minimizes, over candidates, the worst pairwise bound, and the
certified radius follows from the general-K divergence per flip.

Caveats carried from the construction (surfaced here deliberately): the
pairwise-dominance rule is not literally the argmax of the smoothed class
measures, and for K=2 the pairwise event thresholds the score gap at 0 while
the binary pipeline thresholds the score at 1/2; the two events coincide for
every label assignment exactly when the alpha entries sum to 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .certify import (
    MAX_DOUBLE_MARGIN,
    SMALL_Q_THRESHOLD,
    _as_labels,
    margin_from_log_bound,
    radius_from_log_bound,
)
from .data import LabelVector, SmoothingConfig
from .errors import ValidationError
from .regression import AlphaVector, RidgeModel, alpha_for, as_alpha_array
from .solver import TiltedObjective, minimize_tilted, refine_mp


@dataclass(frozen=True)
class PairwiseBound:
    """Tail bound on P(score_i < score_i'); vacuous directions carry log_bound 0."""

    i: int
    i_prime: int
    t_star: float
    log_bound: float
    log_bound_mp: mpmath.mpf | None = None
    precision_bits: int = 53


@dataclass(frozen=True)
class MultiCertificate:
    prediction: int
    p_star: float
    r_kl: int
    per_pair: tuple[PairwiseBound, ...]
    radius_capped: bool = False

    def as_record(self, index: int) -> dict:
        return {
            "index": index,
            "prediction": self.prediction,
            "p_star": self.p_star,
            "r_kl": self.r_kl,
            "radius_capped": self.radius_capped,
            "pairs": [
                {
                    "i": p.i,
                    "i_prime": p.i_prime,
                    "t_star": p.t_star,
                    "log_bound": p.log_bound,
                }
                for p in self.per_pair
            ],
        }


def pairwise_objective(
    alpha: AlphaVector | np.ndarray,
    y: LabelVector | np.ndarray,
    i: int,
    i_prime: int,
    q: float,
    K: int,
) -> TiltedObjective:
    """sum_j log E[exp(-t alpha_j V_j)] where V_j is the row's one-hot score gap.

    V_j takes +1/0/-1; a row labeled i keeps +1 with probability 1-q, a row
    labeled i' keeps -1 with probability 1-q, other rows hit +1 or -1 only
    through a flip into i or i' (probability q/(K-1) each).
    """
    a = as_alpha_array(alpha)
    lab = _as_labels(y)
    if i == i_prime:
        raise ValidationError("pairwise bound needs two distinct classes")
    if not 0 <= i < K or not 0 <= i_prime < K:
        raise ValidationError(f"classes must lie in [0, {K})")
    if not 0.0 < q < (K - 1) / K:
        raise ValidationError(f"q={q} outside (0, {(K-1)/K:g}) for K={K}")
    log_keep = math.log1p(-q)
    log_into = math.log(q / (K - 1))
    log_within = math.log(q * (K - 2) / (K - 1)) if K > 2 else -np.inf
    log_stay_other = math.log1p(-2 * q / (K - 1))
    n = a.shape[0]
    logw = np.empty((n, 3))
    is_i = lab == i
    is_ip = lab == i_prime
    other = ~(is_i | is_ip)
    # columns: V = +1, 0, -1
    logw[is_i] = (log_keep, log_within, log_into)
    logw[is_ip] = (log_into, log_within, log_keep)
    logw[other] = (log_into, log_stay_other, log_into)
    slopes = np.column_stack([-a, np.zeros_like(a), a])
    return TiltedObjective(slopes=slopes, logw=logw, linear=0.0)


def _directed(
    i: int, i_prime: int, t_u: float, log_bound: float, lb_mp, bits: int
) -> PairwiseBound:
    if t_u > 0:
        return PairwiseBound(
            i=i, i_prime=i_prime, t_star=t_u, log_bound=log_bound,
            log_bound_mp=lb_mp, precision_bits=bits,
        )
    return PairwiseBound(i=i, i_prime=i_prime, t_star=0.0, log_bound=0.0)


def _solve_pair(alpha, y, i, i_prime, q, K, precision_bits):
    """One unconstrained solve serving both directions of an unordered pair."""
    obj = pairwise_objective(alpha, y, i, i_prime, q, K)
    t_u, log_bound = minimize_tilted(obj)
    lb_mp = None
    bits = 53
    if t_u != 0 and (q < SMALL_Q_THRESHOLD or 1.0 - math.exp(log_bound) == 1.0):
        _, lb_mp = refine_mp(obj, t_u, precision_bits)
        bits = precision_bits
        log_bound = float(lb_mp)
    fwd = _directed(i, i_prime, t_u, log_bound, lb_mp, bits)
    rev = _directed(i_prime, i, -t_u, log_bound, lb_mp, bits)
    return fwd, rev


def pairwise_chernoff(
    alpha: AlphaVector | np.ndarray,
    y: LabelVector | np.ndarray,
    i: int,
    i_prime: int,
    q: float,
    K: int,
    precision_bits: int = 256,
) -> PairwiseBound:
    """Directed bound for (i, i'); vacuous (log_bound 0) if the optimal tilt
    for this direction is not positive."""
    fwd, _ = _solve_pair(alpha, y, i, i_prime, q, K, precision_bits)
    return fwd


def predict_and_certify_multiclass(
    model: RidgeModel,
    y: LabelVector | np.ndarray,
    test_features: np.ndarray,
    cfg: SmoothingConfig,
) -> MultiCertificate:
    """All K(K-1) directed bounds, worst-pair minimax prediction, general-K radius."""
    K = cfg.K
    lab = _as_labels(y)
    if lab.shape[0] != model.n:
        raise ValidationError(f"label count {lab.shape[0]} != model n {model.n}")
    if lab.size and lab.max() >= K:
        raise ValidationError(f"label {lab.max()} out of range for K={K}")
    alpha = alpha_for(model, test_features)
    a = alpha.alpha
    n = model.n
    if not np.any(a):
        # every score gap is deterministically zero: permanent tie, lowest class
        pairs = tuple(
            PairwiseBound(i=i, i_prime=j, t_star=0.0, log_bound=0.0)
            for i in range(K)
            for j in range(K)
            if i != j
        )
        return MultiCertificate(
            prediction=0,
            p_star=MAX_DOUBLE_MARGIN,
            r_kl=n,
            per_pair=pairs,
            radius_capped=True,
        )
    directed: dict[tuple[int, int], PairwiseBound] = {}
    for i in range(K):
        for j in range(i + 1, K):
            fwd, rev = _solve_pair(a, lab, i, j, cfg.q, K, cfg.precision_bits)
            directed[(i, j)] = fwd
            directed[(j, i)] = rev
    worst = np.array(
        [
            max(directed[(i, j)].log_bound for j in range(K) if j != i)
            for i in range(K)
        ]
    )
    prediction = int(np.argmin(worst))
    worst_pair = max(
        (directed[(prediction, j)] for j in range(K) if j != prediction),
        key=lambda p: p.log_bound,
    )
    lb = (
        worst_pair.log_bound_mp
        if worst_pair.log_bound_mp is not None
        else worst_pair.log_bound
    )
    r_kl, capped = radius_from_log_bound(
        lb, cfg.q, K, n, worst_pair.precision_bits
    )
    pairs = tuple(directed[(i, j)] for i in range(K) for j in range(K) if i != j)
    return MultiCertificate(
        prediction=prediction,
        p_star=margin_from_log_bound(worst_pair.log_bound, 53),
        r_kl=r_kl,
        per_pair=pairs,
        radius_capped=capped,
    )
