import itertools
import math

import numpy as np
import pytest

from labelcert import SmoothingConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def random_binary_instance(rng, n_max=16, n_min=4, signal_prob=0.7, scale=None):
    """Small (alpha, y, q) instance; most draws carry planted signal so that
    certificates are informative rather than uniformly vacuous."""
    n = int(rng.integers(n_min, n_max + 1))
    y = rng.integers(0, 2, n)
    if rng.random() < signal_prob:
        # positive weight concentrated on label-1 rows, unit-ish total mass
        base = rng.random(n) * 0.5 + 0.5
        alpha = base * np.where(y == 1, 1.0, -0.25)
        alpha *= (0.9 + 0.4 * rng.random()) / max(alpha[alpha > 0].sum(), 1e-9)
    else:
        alpha = rng.standard_normal(n) * (scale if scale else 2.0 / n)
    q = float(rng.choice([0.05, 0.1, 0.2, 0.3, 0.45]))
    return alpha, y, q


def separable_instance(rng, n, q, margin=0.85):
    """Instance whose score concentrates above 1/2: mostly-1 labels with
    positive weights summing past 1."""
    y = (rng.random(n) < margin).astype(np.int64)
    alpha = (rng.random(n) * 0.8 + 0.6) / (n * 0.55)
    return alpha, y, q


def brute_force_tails(alpha, y, q):
    """Literal 2^n itertools enumeration; the ground truth the fast
    enumerator is checked against."""
    alpha = np.asarray(alpha, dtype=float)
    y = np.asarray(y)
    p_one = np.where(y == 1, 1.0 - q, q)
    ge = gt = le = lt = 0.0
    for bits in itertools.product((0, 1), repeat=len(alpha)):
        b = np.array(bits)
        pr = float(np.prod(np.where(b == 1, p_one, 1.0 - p_one)))
        s = float(alpha @ b)
        if s >= 0.5:
            ge += pr
        if s > 0.5:
            gt += pr
        if s <= 0.5:
            le += pr
        if s < 0.5:
            lt += pr
    return ge, gt, le, lt


def chernoff_oracle_min(alpha, y, q, lo=-80.0, hi=80.0, grid=4001, refine=200):
    """Independent 1-D minimizer of the tail objective: dense grid plus
    golden-section refinement, written directly from the product form."""
    alpha = np.asarray(alpha, dtype=float)
    y = np.asarray(y)

    def objective(t):
        tot = 0.5 * t
        for a, lab in zip(alpha, y):
            if lab == 1:
                tot += np.logaddexp(math.log(q), math.log1p(-q) - t * a)
            else:
                tot += np.logaddexp(math.log1p(-q), math.log(q) - t * a)
        return tot

    ts = np.linspace(lo, hi, grid)
    vals = np.array([objective(t) for t in ts])
    i = int(np.argmin(vals))
    a, b = ts[max(i - 1, 0)], ts[min(i + 1, grid - 1)]
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(refine):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    t = (a + b) / 2
    return t, objective(t)


def kl_radius_oracle(p, q, K):
    """Numeric inversion of the generic divergence bound: the largest r whose
    per-flip divergence total stays within -0.5 log(4p(1-p))."""
    if p <= 0.5:
        return 0
    budget = -0.5 * math.log(4.0 * p * (1.0 - p))
    per_flip = (1.0 - K * q / (K - 1)) * math.log((1.0 - q) * (K - 1) / q)
    r = 0
    while (r + 1) * per_flip <= budget:
        r += 1
        if r > 10_000_000:
            raise AssertionError("runaway oracle")
    return r


def cfg_for(q, K=2, precision_bits=256):
    return SmoothingConfig(q=q, K=K, precision_bits=precision_bits)
