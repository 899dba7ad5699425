"""Exact combinatorial certificates via worst-case measure transfer.

Two product flip measures built from label vectors differing in r positions
decompose, on those r coordinates, into r+1 regions indexed by the number a
of coordinates where the sample agrees with the first vector. The worst-case
set of a given measure under the first distribution is found by filling
regions in ascending likelihood-ratio order; the minimum margin that still
certifies r flips follows by accumulating region masses until the
transferred measure reaches 1/2. Precomputed per-q tables of these minimum
margins are cached to disk as decimal strings of the margin complement
1 - p_min[r] (the complement is the representable quantity: at depth r the
margin differs from 1 by roughly exp(-r KL), far below any fixed-precision
rendering of p_min itself).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import mpmath
import numpy as np
from scipy.special import gammaln

from .errors import ValidationError

TABLE_FORMAT = "labelcert-tight-table"
TABLE_VERSION = 1


@dataclass(frozen=True)
class LikelihoodRegion:
    """One agreement-count region of the coupled measures, in log domain."""

    a: int
    log_mu_mass: float
    log_rho_mass: float

    @property
    def log_ratio(self) -> float:
        return self.log_rho_mass - self.log_mu_mass


def regions(r: int, q: float) -> list[LikelihoodRegion]:
    """All r+1 regions; mu mass C(r,a)(1-q)^a q^(r-a), rho mass with q and 1-q swapped."""
    if r < 0:
        raise ValidationError(f"r must be >= 0, got {r}")
    if not 0.0 < q < 0.5:
        raise ValidationError(f"tight bound requires q in (0, 1/2), got {q}")
    out = []
    for a in range(r + 1):
        log_binom = float(gammaln(r + 1) - gammaln(a + 1) - gammaln(r - a + 1))
        log_mu = log_binom + a * math.log1p(-q) + (r - a) * math.log(q)
        log_rho = log_binom + a * math.log(q) + (r - a) * math.log1p(-q)
        out.append(LikelihoodRegion(a=a, log_mu_mass=log_mu, log_rho_mass=log_rho))
    return out


def min_rho_measure(p: float, r: int, q: float, exact: bool = False):
    """Infimum of rho(S) over (randomized) sets S with mu(S) = p.

    Greedy fractional fill of regions in ascending rho/mu ratio, i.e. from
    full agreement (a = r) downward. With exact=True the computation runs in
    rational arithmetic (intended as a cross-check oracle for r <= 30) and
    returns a Fraction.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must be in [0, 1], got {p}")
    if exact:
        return _min_rho_exact(Fraction(p), r, Fraction(q))
    remaining = p
    out = 0.0
    for reg in sorted(regions(r, q), key=lambda g: g.log_ratio):
        mu = math.exp(reg.log_mu_mass)
        take = min(remaining, mu)
        out += take * math.exp(reg.log_ratio)
        remaining -= take
        if remaining <= 0.0:
            break
    return out


def _min_rho_exact(p: Fraction, r: int, q: Fraction) -> Fraction:
    masses = []
    for a in range(r + 1):
        binom = math.comb(r, a)
        mu = binom * (1 - q) ** a * q ** (r - a)
        rho = binom * q ** a * (1 - q) ** (r - a)
        masses.append((mu, rho))
    masses.sort(key=lambda m: m[1] / m[0])
    remaining = p
    out = Fraction(0)
    for mu, rho in masses:
        take = min(remaining, mu)
        out += take * rho / mu
        remaining -= take
        if remaining <= 0:
            break
    return out


@dataclass(frozen=True)
class TightTable:
    """Minimum certifying margins p_min[r], stored as complements 1 - p_min[r].

    saturated marks a table whose construction stopped because the next
    entry's complement fell below the working-precision clamp 2**-(precision_bits-1).
    """

    q: float
    precision_bits: int
    complements: tuple[str, ...]
    saturated: bool = False

    def __post_init__(self):
        if not self.complements:
            raise ValidationError("table must contain at least the r=0 entry")

    @property
    def r_max(self) -> int:
        return len(self.complements) - 1

    @cached_property
    def _comp_mpf(self) -> tuple[mpmath.mpf, ...]:
        with mpmath.workprec(self.precision_bits + 16):
            return tuple(mpmath.mpf(s) for s in self.complements)

    def p_min(self, r: int) -> mpmath.mpf:
        """Minimum margin certifying r flips (ties certify)."""
        with mpmath.workprec(self.precision_bits + 16):
            return 1 - self._comp_mpf[r]

    def p_min_floats(self) -> np.ndarray:
        with mpmath.workprec(self.precision_bits + 16):
            return np.array([float(1 - c) for c in self._comp_mpf])


def build_table(q: float, r_max: int, precision_bits: int = 256) -> TightTable:
    """Accumulate region masses until the transferred measure meets 1/2.

    For each r the crossing region a* satisfies
    prefix_rho(a*-1) <= 1/2 < prefix_rho(a*); the margin complement is then
    prefix_mu(a*-1) + mu(a*) (1/2 - prefix_rho(a*-1)) / rho(a*), assembled
    from strictly positive terms so the tiny complements keep full relative
    precision. Stops early once an entry falls below 2**-(precision_bits-1).
    """
    if r_max < 0:
        raise ValidationError(f"r_max must be >= 0, got {r_max}")
    if not 0.0 < q < 0.5:
        raise ValidationError(f"tight bound requires q in (0, 1/2), got {q}")
    digits = int(math.ceil((precision_bits + 16) * math.log10(2))) + 3
    limit = mpmath.mpf(2) ** (-(precision_bits - 1))
    comps: list[str] = []
    saturated = False
    with mpmath.workprec(precision_bits + 64):
        qm = mpmath.mpf(q)
        half = mpmath.mpf(1) / 2
        ratio_up = (1 - qm) / qm
        comps.append(mpmath.nstr(half, digits))
        for r in range(1, r_max + 1):
            mu = qm**r  # a = 0
            rho = (1 - qm) ** r
            low_mu = mpmath.mpf(0)
            low_rho = mpmath.mpf(0)
            a = 0
            while low_rho + rho <= half:
                low_rho += rho
                low_mu += mu
                step = mpmath.mpf(r - a) / (a + 1)
                mu = mu * step * ratio_up
                rho = rho * step / ratio_up
                a += 1
            c = low_mu + mu * (half - low_rho) / rho
            if c < limit:
                saturated = True
                break
            comps.append(mpmath.nstr(c, digits))
    return TightTable(
        q=q,
        precision_bits=precision_bits,
        complements=tuple(comps),
        saturated=saturated,
    )


def _search_complement(comp, table: TightTable, n: int) -> int:
    """Largest r <= min(r_max, n) whose stored complement is >= comp."""
    cs = table._comp_mpf
    hi = min(table.r_max, n)
    if comp > cs[0]:
        return 0
    lo = 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if comp <= cs[mid]:
            lo = mid
        else:
            hi = mid - 1
    return lo


def tight_radius(p_star, table: TightTable, n: int) -> int:
    """Largest r with p_star >= p_min[r], by binary search on the monotone table."""
    with mpmath.workprec(table.precision_bits + 16):
        comp = 1 - mpmath.mpf(p_star)
        if comp < 0:
            raise ValidationError(f"p_star must be < 1, got {p_star}")
        return _search_complement(comp, table, n)


def radius_from_bound(log_bound, table: TightTable, n: int, bits: int) -> int:
    """Tight radius from the log tail bound, avoiding the 1 - p round trip."""
    with mpmath.workprec(max(bits, table.precision_bits) + 16):
        B = mpmath.exp(mpmath.mpf(log_bound))
        floor = mpmath.mpf(2) ** (-(bits - 1))
        if B < floor:
            B = floor
        return _search_complement(B, table, n)


def save_table(table: TightTable, path: str) -> None:
    doc = {
        "format": TABLE_FORMAT,
        "version": TABLE_VERSION,
        "q": table.q,
        "r_max": table.r_max,
        "precision_bits": table.precision_bits,
        "saturated": table.saturated,
        "complement_of_p_min": list(table.complements),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=0)
        fh.write("\n")


def load_table(path: str) -> TightTable:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != TABLE_FORMAT:
        raise ValidationError(f"{path}: not a {TABLE_FORMAT} file")
    if doc.get("version") != TABLE_VERSION:
        raise ValidationError(f"{path}: unsupported table version {doc.get('version')}")
    return TightTable(
        q=float(doc["q"]),
        precision_bits=int(doc["precision_bits"]),
        complements=tuple(doc["complement_of_p_min"]),
        saturated=bool(doc.get("saturated", False)),
    )


def cache_path(cache_dir: str, q: float, precision_bits: int) -> str:
    return os.path.join(cache_dir, f"tight_q{q:.12f}_bits{precision_bits}.json")


def get_or_build_table(
    q: float,
    r_max: int,
    precision_bits: int = 256,
    cache_dir: str | None = None,
    log=None,
) -> TightTable:
    """Load a cached table when deep enough, otherwise build and cache."""
    path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = cache_path(cache_dir, q, precision_bits)
        if os.path.exists(path):
            table = load_table(path)
            if table.saturated or table.r_max >= r_max:
                return table
    if log is not None:
        log(f"building tight table for q={q:g} up to r={r_max} "
            f"({precision_bits}-bit)")
    table = build_table(q, r_max, precision_bits)
    if path is not None:
        save_table(table, path)
    return table
