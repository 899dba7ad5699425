"""One-dimensional convex minimization of log-domain tail-bound objectives.

An exponential tail bound on P(sum_i w_i >= threshold) has the log form

    F(t) = linear * t + sum_i log sum_k exp(logw[i,k] + t * slope[i,k]),

a convex function of the tilt parameter t. Each coordinate contributes a
log-moment-generating-function term over a small finite outcome set; the
objective, its derivative, and its second derivative are evaluated together
with log-sum-exp so that no intermediate overflows occur for |t * slope| far
beyond 1e4. Minimization is a bracketed Newton iteration on the derivative
(monotone increasing), with bisection as the safeguard.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import mpmath

from .errors import SolverError

#: |d1| <= NEWTON_TOL * (1 + |t|) declares convergence.
NEWTON_TOL = 1e-12
MAX_NEWTON_ITER = 100
MAX_BRACKET_EXPANSIONS = 200


@dataclass(frozen=True)
class TiltedObjective:
    """F(t) = linear*t + sum_i LSE_k(logw[i,k] + t*slopes[i,k])."""

    slopes: np.ndarray  # (n, m)
    logw: np.ndarray  # (n, m), entries may be -inf for zero weights
    linear: float

    def __call__(self, t: float) -> tuple[float, float, float]:
        """Value, first and second derivative at t."""
        z = self.logw + t * self.slopes
        m = np.max(z, axis=1, keepdims=True)
        # all-(-inf) rows cannot occur: every outcome set has positive total mass
        e = np.exp(z - m)
        tot = e.sum(axis=1)
        lse = m[:, 0] + np.log(tot)
        w = e / tot[:, None]  # tilted outcome weights, rows sum to 1
        mean = (w * self.slopes).sum(axis=1)
        dev = self.slopes - mean[:, None]
        var = (w * dev * dev).sum(axis=1)
        value = self.linear * t + float(lse.sum())
        d1 = self.linear + float(mean.sum())
        d2 = float(var.sum())
        return value, d1, d2

    def eval_mp(self, t) -> tuple[mpmath.mpf, mpmath.mpf, mpmath.mpf]:
        """Same quantities with mpmath arithmetic at the ambient precision."""
        t = mpmath.mpf(t)
        value = mpmath.mpf(self.linear) * t
        d1 = mpmath.mpf(self.linear)
        d2 = mpmath.mpf(0)
        for i in range(self.slopes.shape[0]):
            terms = []
            for k in range(self.slopes.shape[1]):
                lw = self.logw[i, k]
                if lw == -np.inf:
                    continue
                s = mpmath.mpf(float(self.slopes[i, k]))
                terms.append((s, mpmath.exp(mpmath.mpf(float(lw)) + t * s)))
            tot = mpmath.fsum(v for _, v in terms)
            mean = mpmath.fsum(s * v for s, v in terms) / tot
            var = mpmath.fsum((s - mean) ** 2 * v for s, v in terms) / tot
            value += mpmath.log(tot)
            d1 += mean
            d2 += var
        return value, d1, d2


def _converged(d1: float, t: float, tol: float) -> bool:
    return abs(d1) <= tol * (1.0 + abs(t))


def minimize_tilted(
    obj: TiltedObjective, tol: float = NEWTON_TOL
) -> tuple[float, float]:
    """Unconstrained minimizer of the convex objective.

    Returns (t_star, F(t_star)) with |F'(t_star)| <= tol * (1 + |t_star|).
    If the derivative never changes sign within the expansion range, the
    objective is flat toward one side; the last expansion point is accepted
    when the derivative has decayed below tolerance there (the bound at any
    t is valid, and on a flat asymptote it is within tolerance of the
    infimum). Raises SolverError otherwise.
    """
    value0, d10, _ = obj(0.0)
    if _converged(d10, 0.0, tol):
        return 0.0, value0

    # Expand a bracket [lo, hi] with d1(lo) < 0 < d1(hi); d1 is increasing.
    if d10 < 0:
        lo, hi = 0.0, 1.0
        for _ in range(MAX_BRACKET_EXPANSIONS):
            v, d1, _ = obj(hi)
            if d1 >= 0:
                break
            if _converged(d1, hi, tol):
                return hi, v
            lo, hi = hi, hi * 2.0
        else:
            raise SolverError(
                f"no bracket for the tilt parameter after expanding to t={hi:g} "
                f"(d1={d1:g}); objective appears unbounded below"
            )
    else:
        lo, hi = -1.0, 0.0
        for _ in range(MAX_BRACKET_EXPANSIONS):
            v, d1, _ = obj(lo)
            if d1 <= 0:
                break
            if _converged(d1, lo, tol):
                return lo, v
            lo, hi = lo * 2.0, lo
        else:
            raise SolverError(
                f"no bracket for the tilt parameter after expanding to t={lo:g} "
                f"(d1={d1:g}); objective appears unbounded below"
            )

    # Newton on d1, safeguarded by the bracket.
    t = 0.5 * (lo + hi)
    value, d1, d2 = obj(t)
    for _ in range(MAX_NEWTON_ITER):
        if _converged(d1, t, tol):
            return t, value
        if d1 > 0:
            hi = t
        else:
            lo = t
        t_new = t - d1 / d2 if d2 > 0 else 0.5 * (lo + hi)
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        if t_new == t:  # interval exhausted at float resolution
            return t, value
        t = t_new
        value, d1, d2 = obj(t)
    raise SolverError(
        f"Newton/bisection did not converge: t={t:g}, d1={d1:g}, d2={d2:g}"
    )


def refine_mp(
    obj: TiltedObjective,
    t0: float,
    precision_bits: int,
    max_steps: int = 2,
) -> tuple[mpmath.mpf, mpmath.mpf]:
    """Re-evaluate (and lightly polish) the minimizer at extended precision.

    Any tilt yields a valid bound, so the double-precision minimizer already
    gives a sound value; a few Newton steps at precision_bits merely sharpen
    the last bits. Returns (t, F(t)) as mpf computed at precision_bits plus
    guard bits.
    """
    with mpmath.workprec(precision_bits + 16):
        t = mpmath.mpf(float(t0))
        value, d1, d2 = obj.eval_mp(t)
        for _ in range(max_steps):
            if abs(d1) <= mpmath.mpf(NEWTON_TOL) * (1 + abs(t)) or d2 <= 0:
                break
            t = t - d1 / d2
            value, d1, d2 = obj.eval_mp(t)
        return t, value
