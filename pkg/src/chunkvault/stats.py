"""Small shared statistics helpers (eCDF tables, percentiles)."""

from __future__ import annotations

import math
from typing import Iterable, Sequence


def ecdf(values: Iterable[float]) -> list[tuple[float, float]]:
    """Empirical CDF as (value, cumulative_fraction) rows, sorted by value."""
    vals = sorted(values)
    n = len(vals)
    return [(v, (i + 1) / n) for i, v in enumerate(vals)]


def percentile(values: Sequence[float], q: float) -> float:
    """q-quantile (0..1) by linear interpolation on sorted data."""
    if not values:
        raise ValueError("percentile of empty sequence")
    vals = sorted(values)
    if len(vals) == 1:
        return vals[0]
    pos = q * (len(vals) - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return vals[lo]
    frac = pos - lo
    return vals[lo] * (1 - frac) + vals[hi] * frac


def mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0
