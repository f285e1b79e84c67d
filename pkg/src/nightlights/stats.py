"""Cross-sectional dispersion, distribution moments, QQ and scatter data."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .errors import FormatError, InsufficientDataError, UndefinedError
from .pipeline import DemeanedDiffGrid, _as_diffs, _select, cumulative_change, demean_or_none
from .regions import WORLD, RegionMask, Scope, scope_indices


def cross_sectional_sigma(d: DemeanedDiffGrid) -> tuple[float, int]:
    """Population standard deviation of the demeaned values.

    Evaluated as ``sqrt((n*sum(d^2) - sum(d)^2) / n^2)`` on the exact integer
    changes, then rounded once.
    """
    n = d.count
    if n < 2:
        raise InsufficientDataError(f"{n} active value(s); at least 2 are needed for a dispersion")
    var = Fraction(n * d.sum_sq - d.scope_sum * d.scope_sum, n * n)
    return math.sqrt(var), n


@dataclass(frozen=True)
class SigmaEntry:
    year: int
    sigma: float
    n: int


@dataclass(frozen=True)
class SigmaSeries:
    scope: Scope
    entries: tuple[SigmaEntry, ...]

    def as_dict(self) -> dict[int, float]:
        return {e.year: e.sigma for e in self.entries}


def sigma_series(panel, mask: RegionMask | None = None, scope: Scope = WORLD, **kw) -> SigmaSeries:
    """One dispersion per difference year; years without enough data give NaN."""
    entries = []
    for diff in _as_diffs(panel, **kw):
        dm = demean_or_none(diff, mask, scope)
        n = 0 if dm is None else dm.count
        if n < 2:
            entries.append(SigmaEntry(diff.year, math.nan, n))
        else:
            sigma, n = cross_sectional_sigma(dm)
            entries.append(SigmaEntry(diff.year, sigma, n))
    return SigmaSeries(scope, tuple(entries))


@dataclass(frozen=True)
class MomentSummary:
    mean: float
    std: float
    skewness: float
    excess_kurtosis: float
    n: int


class MomentAccumulator:
    """Mergeable central moments up to order four.

    Chunks are reduced with an exact two-pass on the chunk and combined with
    the pairwise update formulas of Chan et al. / Pebay, so large arrays can
    be streamed in bands and merged in a fixed order.
    """

    __slots__ = ("n", "mean", "m2", "m3", "m4")

    def __init__(self):
        self.n = 0
        self.mean = self.m2 = self.m3 = self.m4 = 0.0

    def update(self, values) -> "MomentAccumulator":
        x = np.asarray(values, dtype=np.float64).ravel()
        if x.size == 0:
            return self
        other = MomentAccumulator()
        other.n = int(x.size)
        other.mean = float(x.mean())
        dev = x - other.mean
        d2 = dev * dev
        other.m2 = float(d2.sum())
        other.m3 = float((d2 * dev).sum())
        other.m4 = float((d2 * d2).sum())
        return self.merge(other)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2, self.m3, self.m4 = other.n, other.mean, other.m2, other.m3, other.m4
            return self
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        d_n2 = d_n * d_n
        term = delta * d_n * na * nb
        m4 = (self.m4 + other.m4 + term * d_n2 * (na * na - na * nb + nb * nb)
              + 6.0 * d_n2 * (na * na * other.m2 + nb * nb * self.m2)
              + 4.0 * d_n * (na * other.m3 - nb * self.m3))
        m3 = (self.m3 + other.m3 + term * d_n * (na - nb)
              + 3.0 * d_n * (na * other.m2 - nb * self.m2))
        self.m2 = self.m2 + other.m2 + term
        self.m3, self.m4 = m3, m4
        self.mean = self.mean + d_n * nb
        self.n = n
        return self

    def summary(self) -> MomentSummary:
        n = self.n
        if n < 4:
            raise InsufficientDataError(f"{n} value(s); moments need at least 4")
        var = self.m2 / n
        std = math.sqrt(var)
        if var == 0.0:
            return MomentSummary(self.mean, 0.0, math.nan, math.nan, n)
        skew = (self.m3 / n) / var ** 1.5
        kurt = (self.m4 / n) / (var * var) - 3.0
        return MomentSummary(self.mean, std, skew, kurt, n)


def moments(values, chunk: int = 1 << 20) -> MomentSummary:
    x = np.asarray(values, dtype=np.float64).ravel()
    acc = MomentAccumulator()
    for start in range(0, x.size, chunk):
        acc.update(x[start:start + chunk])
    return acc.summary()


def qq_data(a, b, q: int) -> np.ndarray:
    """Matched empirical quantiles at probabilities ``(k - 0.5) / q``.

    Returns a ``(q, 2)`` array of ``(quantile_a, quantile_b)``.  Quantiles
    interpolate linearly between order statistics, with order statistic
    ``x_(m)`` (1-based) placed at probability ``(m - 0.5) / n``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("qq_data needs two nonempty samples")
    if q < 2:
        raise ValueError("q must be at least 2")
    p = (np.arange(1, q + 1) - 0.5) / q
    return np.column_stack([np.quantile(a, p, method="hazen"), np.quantile(b, p, method="hazen")])


@dataclass(frozen=True)
class ScatterSet:
    """Per-pixel cumulative change in two periods, keyed by total change."""

    period_a: tuple[int, int]
    period_b: tuple[int, int]
    index: np.ndarray
    x: np.ndarray
    y: np.ndarray
    color: np.ndarray

    def __len__(self):
        return int(self.index.size)


def growth_scatter(panel, mask: RegionMask | None, scope: Scope,
                   period_a: tuple[int, int], period_b: tuple[int, int], **kw) -> ScatterSet:
    """Points for every pixel active in at least one of two disjoint periods.

    A pixel inactive throughout one period gets 0 for that coordinate.  The
    colour key is the cumulative change over both periods together.
    """
    if period_a[0] > period_a[1] or period_b[0] > period_b[1]:
        raise ValueError("empty period")
    if not (period_a[1] < period_b[0] or period_b[1] < period_a[0]):
        raise ValueError(f"periods {period_a} and {period_b} overlap")
    diffs = _as_diffs(panel, **kw)
    ca = cumulative_change(diffs, mask, scope, period_a)
    cb = cumulative_change(diffs, mask, scope, period_b)
    union = _select(diffs, period_a) + _select(diffs, period_b)
    union.sort(key=lambda d: d.year)
    total = cumulative_change(union, mask, scope)
    hit = (ca.counts > 0) | (cb.counts > 0)
    idx = np.flatnonzero(hit.ravel())
    x = np.nan_to_num(ca.values.ravel()[idx], nan=0.0)
    y = np.nan_to_num(cb.values.ravel()[idx], nan=0.0)
    return ScatterSet(period_a, period_b, idx, x, y, total.values.ravel()[idx])


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("pearson needs series of equal length")
    if x.size < 2:
        raise InsufficientDataError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedError("correlation undefined for a constant series")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def read_series_csv(path) -> dict[int, float]:
    """Read a ``year,value`` CSV into an ordered mapping."""
    out: dict[int, float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["year", "value"]:
            raise FormatError(f"{path}: header must be 'year,value'")
        for row in reader:
            if not row:
                continue
            try:
                out[int(row[0])] = float(row[1])
            except (IndexError, ValueError):
                raise FormatError(f"{path}: bad row {row!r}") from None
    return dict(sorted(out.items()))


def correlate_series(a: Mapping[int, float], b: Mapping[int, float]) -> tuple[float, int]:
    """Pearson correlation over the years both series define (finite values)."""
    years = [y for y in sorted(a) if y in b and math.isfinite(a[y]) and math.isfinite(b[y])]
    return pearson([a[y] for y in years], [b[y] for y in years]), len(years)


def percent_factor(panel, mask: RegionMask | None = None, scope: Scope = WORLD) -> float:
    """``100 / mean lit intensity`` of the scope in the panel's first year.

    Multiplying demeaned DN changes by this factor expresses them as a
    percentage of the average lit pixel.
    """
    first = panel.grids[0]
    vals = first.values.ravel()
    if not scope.is_world:
        vals = vals[scope_indices(mask, scope)]
    lit = vals[(vals > 0) & (vals != first.nodata)]
    if lit.size == 0:
        raise UndefinedError(f"{scope} has no lit pixel in {first.year}")
    return 100.0 / float(lit.mean())


def flatten_values(items: Iterable[DemeanedDiffGrid]) -> np.ndarray:
    parts = [d.values for d in items]
    return np.concatenate(parts) if parts else np.empty(0)

