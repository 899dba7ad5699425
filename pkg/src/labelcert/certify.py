"""Analytic certification of binary predictions under label-flip smoothing.

The smoothed prediction on a test point with kernel weights alpha is the
majority vote of 1{alpha^T yhat >= 1/2} over independently flipped copies
yhat of the training labels. The probability of the minority outcome is
bounded by minimizing a one-dimensional log-convex tail objective in the
tilt parameter t; the sign of the optimal t encodes the prediction and the
bound value yields a certified margin p*, which converts to a number of
adversarial label flips the prediction provably survives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .data import LabelVector, SmoothingConfig
from .errors import ValidationError
from .regression import AlphaVector, RidgeModel, alpha_for, as_alpha_array
from .solver import TiltedObjective, minimize_tilted, refine_mp

LN2 = math.log(2.0)
#: q below this always routes through extended precision.
SMALL_Q_THRESHOLD = 1e-3
#: largest double-precision margin, 1 - 2**-52
MAX_DOUBLE_MARGIN = 1.0 - 2.0**-52


def _as_labels(y: LabelVector | np.ndarray) -> np.ndarray:
    lab = y.labels if isinstance(y, LabelVector) else np.asarray(y, dtype=np.int64)
    return lab


@dataclass(frozen=True)
class ChernoffResult:
    """Optimal tilt, log tail bound on the opposite prediction, and margin.

    log_bound_mp carries the extended-precision value of the bound when the
    double-precision margin saturates (or q is tiny); the float fields remain
    the 53-bit view. For label-independent predictions (every realizable
    score on one side of 1/2) degenerate is set, t_star is -inf, and the
    bound is exactly zero.
    """

    t_star: float
    log_bound: float
    p_star: float
    prediction: int
    degenerate: bool = False
    log_bound_mp: mpmath.mpf | None = None
    precision_bits: int = 53


@dataclass(frozen=True)
class Certificate:
    """Per-test-point prediction with certified flip radii."""

    prediction: int
    p_star: float
    r_kl: int
    r_tight: int | None
    radius_capped: bool
    t_star: float

    def as_record(self, index: int) -> dict:
        t = self.t_star if math.isfinite(self.t_star) else None
        return {
            "index": index,
            "prediction": self.prediction,
            "t_star": t,
            "p_star": self.p_star,
            "r_kl": self.r_kl,
            "r_tight": self.r_tight,
            "radius_capped": self.radius_capped,
        }


def binary_objective(
    alpha: AlphaVector | np.ndarray, y: LabelVector | np.ndarray, q: float
) -> TiltedObjective:
    """Tail objective t/2 + sum_i log E[exp(-t alpha_i yhat_i)].

    Rows with label 1 contribute log(q + (1-q) e^{-t alpha_i}); rows with
    label 0 contribute log((1-q) + q e^{-t alpha_i}).
    """
    a = as_alpha_array(alpha)
    lab = _as_labels(y)
    if a.shape[0] != lab.shape[0]:
        raise ValidationError(
            f"alpha length {a.shape[0]} != label count {lab.shape[0]}"
        )
    if not 0.0 < q < 0.5:
        raise ValidationError(f"binary smoothing requires q in (0, 1/2), got {q}")
    log_keep = math.log1p(-q)
    log_flip = math.log(q)
    # outcome yhat_i = 1 has weight 1-q iff y_i = 1, else q
    logw1 = np.where(lab == 1, log_keep, log_flip)
    logw0 = np.where(lab == 1, log_flip, log_keep)
    slopes = np.column_stack([-a, np.zeros_like(a)])
    logw = np.column_stack([logw1, logw0])
    return TiltedObjective(slopes=slopes, logw=logw, linear=0.5)


def chernoff_objective(
    alpha: AlphaVector | np.ndarray,
    y: LabelVector | np.ndarray,
    q: float,
    t: float,
) -> tuple[float, float, float]:
    """Objective value and first/second derivatives in t at a given tilt."""
    if not math.isfinite(t):
        raise ValidationError(f"t must be finite, got {t}")
    return binary_objective(alpha, y, q)(t)


def solve_chernoff(
    alpha: AlphaVector | np.ndarray,
    y: LabelVector | np.ndarray,
    q: float,
    precision_bits: int = 256,
) -> ChernoffResult:
    """Minimize the tail objective and read off prediction, bound, margin.

    The unconstrained minimizer's sign picks the predicted label (ties at
    t=0 predict 1); the objective value at the minimizer is the log of the
    bound on the opposite prediction's probability, and
    p* = max(1 - bound, 1/2).

    When alpha has total positive mass below 1/2 no label assignment can
    reach the 1/2 threshold, the prediction is 0 regardless of labels, and
    the result is flagged degenerate (this covers alpha = 0).
    """
    a = as_alpha_array(alpha)
    lab = _as_labels(y)
    if a.shape[0] != lab.shape[0]:
        raise ValidationError(
            f"alpha length {a.shape[0]} != label count {lab.shape[0]}"
        )
    if lab.size and lab.max() > 1:
        raise ValidationError("binary certification requires labels in {0, 1}")
    s_pos = float(a[a > 0].sum())
    if s_pos < 0.5:
        return ChernoffResult(
            t_star=float("-inf"),
            log_bound=float("-inf"),
            p_star=MAX_DOUBLE_MARGIN,
            prediction=0,
            degenerate=True,
        )
    obj = binary_objective(a, lab, q)
    t_star, log_bound = minimize_tilted(obj)
    prediction = 1 if t_star >= 0 else 0
    log_bound_mp = None
    bits = 53
    if q < SMALL_Q_THRESHOLD or 1.0 - math.exp(log_bound) == 1.0:
        _, log_bound_mp = refine_mp(obj, t_star, precision_bits)
        bits = precision_bits
        log_bound = float(log_bound_mp)
    p_star = margin_from_log_bound(log_bound, 53)
    return ChernoffResult(
        t_star=t_star,
        log_bound=log_bound,
        p_star=p_star,
        prediction=prediction,
        log_bound_mp=log_bound_mp,
        precision_bits=bits,
    )


def margin_from_log_bound(log_bound: float, bits: int) -> float:
    """p* = max(1 - exp(log_bound), 1/2), clamped below 1 at 2**-(bits-1)."""
    floored = max(log_bound, -(bits - 1) * LN2)
    return min(max(1.0 - math.exp(floored), 0.5), MAX_DOUBLE_MARGIN)


def kl_divergence(r: int, q: float, K: int = 2) -> float:
    """Divergence between the flip measures of label vectors differing in r slots.

    Equals r (1 - Kq/(K-1)) log((1-q)(K-1)/q) nats; symmetric in its two
    arguments, zero iff r = 0.
    """
    if r < 0:
        raise ValidationError(f"r must be >= 0, got {r}")
    if not 0.0 < q < (K - 1) / K:
        raise ValidationError(f"q={q} outside (0, {(K-1)/K:g}) for K={K}")
    return r * (1.0 - K * q / (K - 1)) * math.log((1.0 - q) * (K - 1) / q)


def _radius_real(num_log, q: float, K: int):
    """log(4 p (1-p)) / (2 (1 - Kq/(K-1)) log(q / ((1-q)(K-1)))), given the numerator."""
    if isinstance(num_log, mpmath.mpf):
        qm = mpmath.mpf(q)
        den = 2 * (1 - K * qm / (K - 1)) * mpmath.log(qm / ((1 - qm) * (K - 1)))
        return num_log / den
    den = 2.0 * (1.0 - K * q / (K - 1)) * math.log(q / ((1.0 - q) * (K - 1)))
    return num_log / den


def radius_from_log_bound(
    log_bound, q: float, K: int, n: int | None, bits: int
) -> tuple[int, bool]:
    """Certified flip count from the log tail bound, in log domain throughout.

    The margin is p = 1 - B with B = exp(log_bound) floored at the smallest
    margin-complement representable at the working precision, so
    log(4 p (1-p)) = log 4 + log B + log1p(-B) never suffers cancellation.
    Returns (radius, capped-at-n flag).
    """
    floor = -(bits - 1) * LN2
    if isinstance(log_bound, mpmath.mpf):
        with mpmath.workprec(bits + 16):
            lb = log_bound
            if lb < floor:
                lb = mpmath.mpf(floor)
            if lb >= 0:
                return 0, False
            B = mpmath.exp(lb)
            if B >= 0.5:  # bound above 1/2: uninformative
                return 0, False
            num = mpmath.log(4) + lb + mpmath.log1p(-B)
            if num >= 0:
                return 0, False
            val = _radius_real(num, q, K)
            r = int(mpmath.floor(val))
    else:
        lb = max(log_bound, floor)
        if lb >= 0:
            return 0, False
        B = math.exp(lb)
        if B >= 0.5:
            return 0, False
        num = math.log(4.0) + lb + math.log1p(-B)
        if num >= 0:
            return 0, False
        r = int(math.floor(_radius_real(num, q, K)))
    r = max(r, 0)
    if n is not None and r > n:
        return n, True
    return r, False


def kl_radius(p_star, q: float, K: int = 2, n: int | None = None) -> int:
    """Largest certifiable flip count floor(log(4p(1-p)) / divergence-per-flip).

    Accepts a float or mpmath margin in [1/2, 1); clamped to [0, n] when n is
    given. p* at or below 1/2 certifies 0 flips.
    """
    if isinstance(p_star, mpmath.mpf):
        if p_star <= 0.5:
            return 0
        num = mpmath.log(4 * p_star * (1 - p_star))
        val = _radius_real(num, q, K)
        r = max(int(mpmath.floor(val)), 0)
    else:
        if p_star <= 0.5:
            return 0
        p = min(float(p_star), MAX_DOUBLE_MARGIN)
        num = math.log(4.0 * p * (1.0 - p))
        r = max(int(math.floor(_radius_real(num, q, K))), 0)
    if n is not None:
        r = min(r, n)
    return r


def certify_point(
    model: RidgeModel,
    y: LabelVector | np.ndarray,
    test_features: np.ndarray,
    cfg: SmoothingConfig,
    table=None,
) -> Certificate:
    """Full per-point pipeline: alpha, tail-bound solve, KL and tight radii.

    A supplied tight table must have been built for the same q. Both radii
    use the same working precision as the bound; the tight radius never
    reports below the KL radius (both are valid certified radii, so their
    max is one too).
    """
    if cfg.K != 2:
        raise ValidationError("certify_point is the binary path; use multiclass for K > 2")
    lab = _as_labels(y)
    if lab.shape[0] != model.n:
        raise ValidationError(f"label count {lab.shape[0]} != model n {model.n}")
    alpha = alpha_for(model, test_features)
    res = solve_chernoff(alpha, lab, cfg.q, cfg.precision_bits)
    n = model.n
    if res.degenerate:
        r_tight = n if table is not None else None
        return Certificate(
            prediction=res.prediction,
            p_star=res.p_star,
            r_kl=n,
            r_tight=r_tight,
            radius_capped=True,
            t_star=res.t_star,
        )
    lb = res.log_bound_mp if res.log_bound_mp is not None else res.log_bound
    r_kl, capped = radius_from_log_bound(lb, cfg.q, 2, n, res.precision_bits)
    r_tight = None
    if table is not None:
        if round(table.q, 12) != round(cfg.q, 12):
            raise ValidationError(
                f"tight table was built for q={table.q}, certification uses q={cfg.q}"
            )
        from .tight import radius_from_bound  # local import to avoid a cycle

        r_tight = max(radius_from_bound(lb, table, n, res.precision_bits), r_kl)
    return Certificate(
        prediction=res.prediction,
        p_star=res.p_star,
        r_kl=r_kl,
        r_tight=r_tight,
        radius_capped=capped,
        t_star=res.t_star,
    )
