"""Scalar Kronecker approximation: integer pairs (q, l) with q*sqrt(2) - l
approximating a real target modulo integers.

Every returned witness is re-verified in extended precision (mpmath, 60
digits) with an evaluation order independent of the search path, since
cancellation in q*sqrt(2) - l destroys double precision once q is large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import KroneckerCapExceeded

SQRT2 = math.sqrt(2.0)

_MP_DPS = 60
_BLOCK = 1 << 16


def pell_denominators(limit: int) -> list[int]:
    """Continued-fraction denominators of sqrt(2): 1, 2, 5, 12, 29, 70, ..."""
    out = []
    a, b = 1, 2
    while a <= limit:
        out.append(a)
        a, b = b, 2 * b + a
    return out


def _verified_error(beta: float, q: int) -> tuple[int, float]:
    """(l, |beta - q*sqrt2 + l|) in extended precision."""
    with mpmath.workdps(_MP_DPS):
        r = mpmath.mpf(q) * mpmath.sqrt(2) - mpmath.mpf(beta)
        l = int(mpmath.nint(r))
        # independent order: accumulate the large terms first
        err = abs((mpmath.mpf(l) - mpmath.mpf(q) * mpmath.sqrt(2)) + mpmath.mpf(beta))
    return l, float(err)


@dataclass(frozen=True)
class KroneckerWitness:
    """Integers q > 0 and l with |beta - q*sqrt(2) + l| < the requested epsilon."""

    beta: float
    q: int
    l: int
    achieved_error: float

    def __post_init__(self):
        if self.q <= 0:
            raise ValueError("q must be a positive integer")

    def to_json_dict(self) -> dict:
        return {"beta": self.beta, "q": self.q, "l": self.l,
                "achieved_error": self.achieved_error}


def _scan_errors(beta: float, q_lo: int, q_hi: int) -> np.ndarray:
    """|beta - q*sqrt2 + round(q*sqrt2 - beta)| for q in [q_lo, q_hi)."""
    q = np.arange(q_lo, q_hi, dtype=np.int64)
    if q_hi > 1 << 22:
        r = q.astype(np.longdouble) * np.sqrt(np.longdouble(2)) - np.longdouble(beta)
    else:
        r = q * SQRT2 - beta
    frac = r - np.rint(r)
    return np.abs(frac).astype(float)


def kronecker_search(beta: float, epsilon: float, q_cap: int = 10**7) -> KroneckerWitness:
    """Smallest q <= q_cap admitting an l with |beta - q*sqrt2 + l| < epsilon.

    Pell denominators are probed first to bound the search (|q*sqrt2 - l| is
    minimized along continued-fraction convergents), then the linear scan up
    to that bound guarantees minimality.  Existence for some cap follows from
    the scalar Kronecker approximation theorem (sqrt2 irrational).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    q_hi = q_cap + 1
    for p in pell_denominators(q_cap):
        _, err = _verified_error(beta, p)
        if err < epsilon:
            q_hi = min(q_hi, p + 1)
            break

    best_q, best_err = 0, math.inf
    for lo in range(1, q_hi, _BLOCK):
        hi = min(lo + _BLOCK, q_hi)
        errs = _scan_errors(beta, lo, hi)
        for idx in np.nonzero(errs < epsilon)[0]:
            q = lo + int(idx)
            l, err = _verified_error(beta, q)
            if err < epsilon:
                return KroneckerWitness(float(beta), q, l, err)
        blk_best = int(np.argmin(errs))
        if errs[blk_best] < best_err:
            best_q, best_err = lo + blk_best, float(errs[blk_best])
    raise KroneckerCapExceeded(float(beta), float(epsilon), q_cap, best_q, best_err)


@dataclass(frozen=True)
class TokenDecomposition:
    """Token counts realizing a ~= q*sqrt(2) + sign*l with q, l >= 0.

    q counts sqrt2 tokens and l counts unit tokens of the given sign; negative
    targets are reached with -1 tokens (the vocabulary carries +sqrt2, +1, -1).
    """

    target: float
    count_sqrt2: int
    count_unit: int
    unit_sign: int
    achieved_error: float

    def __post_init__(self):
        if self.count_sqrt2 < 0 or self.count_unit < 0:
            raise ValueError("token counts must be non-negative")
        if self.unit_sign not in (-1, 1):
            raise ValueError("unit_sign must be +1 or -1")

    @property
    def value(self) -> float:
        return self.count_sqrt2 * SQRT2 + self.unit_sign * self.count_unit

    @property
    def token_count(self) -> int:
        return self.count_sqrt2 + self.count_unit

    def token_values(self) -> list[float]:
        """Mapping onto vocabulary y tokens: q sqrt2 entries, l signed units."""
        return [SQRT2] * self.count_sqrt2 + [float(self.unit_sign)] * self.count_unit

    def to_json_dict(self) -> dict:
        return {"target": self.target, "count_sqrt2": self.count_sqrt2,
                "count_unit": self.count_unit, "unit_sign": self.unit_sign,
                "achieved_error": self.achieved_error}


def coefficient_decompose(a: float, epsilon: float, q_cap: int = 10**7) -> TokenDecomposition:
    """Cheapest-q token decomposition of a real coefficient.

    Scans q = 0, 1, 2, ... and returns the first q whose integer remainder
    satisfies |a - (q*sqrt2 + sign*l)| < epsilon.  q = 0 covers (near-)integer
    coefficients, which need no sqrt2 tokens at all.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    with mpmath.workdps(_MP_DPS):
        r0 = mpmath.mpf(a)
        l0 = int(mpmath.nint(r0))
        err0 = float(abs(r0 - l0))
    if err0 < epsilon:
        sign = 1 if l0 >= 0 else -1
        return TokenDecomposition(float(a), 0, abs(l0), sign, err0)
    try:
        wit = kronecker_search(a, epsilon, q_cap)
    except KroneckerCapExceeded:
        raise
    # the witness gives a ~= q*sqrt2 - l, i.e. sign = -sign(l) in q*sqrt2 + s*l
    sign = 1 if wit.l <= 0 else -1
    return TokenDecomposition(float(a), wit.q, abs(wit.l), sign, wit.achieved_error)
