"""Sound interval arithmetic used for dependent-variable bound propagation.

All operations are inclusion-isotonic: shrinking an input interval never
widens the output. ``square`` of an interval straddling zero has lower bound
exactly 0 (the naive min-of-endpoint-squares rule is invalid there).
"""

from __future__ import annotations

import numpy as np


def square(lo, hi):
    """Elementwise interval square of [lo, hi]; arrays or scalars."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    lo2, hi2 = lo * lo, hi * hi
    out_hi = np.maximum(lo2, hi2)
    out_lo = np.where((lo <= 0.0) & (hi >= 0.0), 0.0, np.minimum(lo2, hi2))
    return out_lo, out_hi


def product(alo, ahi, blo, bhi):
    """Elementwise interval product [alo, ahi] * [blo, bhi]."""
    c = [np.asarray(x, dtype=float) for x in (alo, ahi, blo, bhi)]
    p = np.stack([c[0] * c[2], c[0] * c[3], c[1] * c[2], c[1] * c[3]])
    return p.min(axis=0), p.max(axis=0)


def divide_scalar(a: float, lo, hi):
    """Interval of a / t for t in [lo, hi] with 0 not in [lo, hi].

    Sign-aware: valid for negative numerators (distributed generation).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any((lo <= 0.0) & (hi >= 0.0)):
        raise ZeroDivisionError("denominator interval contains zero")
    q1, q2 = a / lo, a / hi
    return np.minimum(q1, q2), np.maximum(q1, q2)


def intersect(alo, ahi, blo, bhi):
    """Intersection; caller checks lo <= hi for emptiness."""
    return np.maximum(alo, blo), np.minimum(ahi, bhi)
