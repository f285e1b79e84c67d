"""Aggregate light growth per region with year fixed effects.

The log of total light in region ``r`` and year ``t`` is modelled as

    log L[r, t] = alpha[r] + beta[r] * (t - t_mid) + gamma[t] + e[r, t]

and fitted by ordinary least squares.  Year effects are identified by
requiring ``sum(gamma) = 0`` and ``sum((t - t_mid) * gamma) = 0``; this keeps
each region's own trend in ``beta`` instead of letting a shared trend
migrate into ``gamma``.  Growth for a period is the mean (and population
spread) of the year-to-year change of ``log L - gamma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._bands import DEFAULT_CHUNK_ROWS, map_bands
from .errors import DataError, IdentificationError, InsufficientDataError
from .grid import Panel
from .regions import WORLD, RegionMask, Scope


@dataclass(frozen=True, eq=False)
class AggregateSeries:
    scope: Scope
    years: tuple[int, ...]
    total: np.ndarray
    log: np.ndarray = field(init=False)

    def __post_init__(self):
        total = np.asarray(self.total, dtype=np.float64)
        if (total < 0).any():
            raise DataError("total light cannot be negative")
        with np.errstate(divide="ignore"):
            log = np.where(total > 0, np.log(np.where(total > 0, total, 1.0)), np.nan)
        object.__setattr__(self, "total", total)
        object.__setattr__(self, "log", log)

    @classmethod
    def from_log(cls, scope: Scope, years, log) -> "AggregateSeries":
        """Series given directly in log units (totals are ``exp(log)``)."""
        out = cls(scope, tuple(years), np.exp(np.asarray(log, dtype=np.float64)))
        object.__setattr__(out, "log", np.asarray(log, dtype=np.float64).copy())
        return out

    @property
    def undefined_years(self) -> tuple[int, ...]:
        return tuple(y for y, v in zip(self.years, self.log) if not math.isfinite(v))

    def changes(self) -> dict[int, float]:
        """Annual change of log total light, keyed by the later year."""
        return {b: float(self.log[i + 1] - self.log[i])
                for i, b in enumerate(self.years[1:])}


def aggregate_all(panel: Panel, mask: RegionMask | None = None, *,
                  chunk_rows: int = DEFAULT_CHUNK_ROWS, threads: int = 1) -> dict[Scope, AggregateSeries]:
    """Totals of valid DN for the world and every region of ``mask``, one pass per year."""
    n_ids = 1 if mask is None else int(mask.ids.max(initial=0)) + 1
    w = panel.geometry.width
    totals = np.zeros((len(panel), n_ids), dtype=np.int64)
    for k, grid in enumerate(panel):
        def band(r0, r1, grid=grid):
            v = grid.read_rows(r0, r1).ravel()
            ok = v != grid.nodata
            if mask is None:
                return np.array([v[ok].sum(dtype=np.int64)])
            ids = mask.ids.ravel()[r0 * w:r1 * w]
            return np.bincount(ids[ok], weights=v[ok], minlength=n_ids).astype(np.int64)
        for part in map_bands(band, panel.geometry.height, chunk_rows, threads):
            totals[k] += part
    out = {WORLD: AggregateSeries(WORLD, panel.years, totals.sum(axis=1))}
    if mask is not None:
        for r in mask.table:
            col = totals[:, r.id] if r.id < n_ids else np.zeros(len(panel), np.int64)
            out[Scope(r.id)] = AggregateSeries(Scope(r.id), panel.years, col)
    return out


def build_aggregate_series(panel: Panel, mask: RegionMask | None = None, scope: Scope = WORLD,
                           **kw) -> AggregateSeries:
    if mask is not None:
        mask.check(scope)
    elif not scope.is_world:
        raise ValueError("a region scope needs a mask")
    return aggregate_all(panel, mask, **kw)[scope]


@dataclass(frozen=True, eq=False)
class YearEffects:
    years: tuple[int, ...]
    gamma: np.ndarray
    t_mid: float
    region_fit: Mapping[Scope, tuple[float, float]]
    residual_ss: float = 0.0

    def __getitem__(self, year: int) -> float:
        return float(self.gamma[self.years.index(year)])


def _effect_basis(tau: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the vectors orthogonal to ``1`` and ``tau``."""
    q, _ = np.linalg.qr(np.column_stack([np.ones_like(tau), tau]), mode="complete")
    return q[:, 2:]


def fit_year_effects(all_series: Sequence[AggregateSeries]) -> YearEffects:
    """Two-way OLS with region intercepts, region trends and year effects.

    The year effects are parameterised in a basis orthogonal to a constant
    and a linear trend, so the normal equations are full rank exactly when
    the model is identified.
    """
    series = list(all_series)
    if len(series) < 2:
        raise IdentificationError("year effects need at least two regions")
    years = sorted({y for s in series for y in s.years})
    if len(years) < 3:
        raise IdentificationError("year effects need at least three years")
    if years != list(range(years[0], years[-1] + 1)):
        raise IdentificationError("years must be consecutive")
    T, R = len(years), len(series)
    t_mid = (years[0] + years[-1]) / 2.0
    tau = np.asarray(years, dtype=np.float64) - t_mid
    basis = _effect_basis(tau)

    rows, cols_r, obs = [], [], []
    for r, s in enumerate(series):
        for y, v in zip(s.years, s.log):
            if math.isfinite(v):
                rows.append(y - years[0])
                cols_r.append(r)
                obs.append(v)
    t_idx = np.asarray(rows)
    r_idx = np.asarray(cols_r)
    y = np.asarray(obs)
    X = np.zeros((y.size, 2 * R + T - 2))
    X[np.arange(y.size), r_idx] = 1.0
    X[np.arange(y.size), R + r_idx] = tau[t_idx]
    X[:, 2 * R:] = basis[t_idx]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise IdentificationError("fixed-effects design is rank deficient")

    coef = np.linalg.solve(X.T @ X, X.T @ y)
    gamma = basis @ coef[2 * R:]
    resid = y - X @ coef
    fit = {s.scope: (float(coef[r]), float(coef[R + r])) for r, s in enumerate(series)}
    return YearEffects(tuple(years), gamma, t_mid, fit, float(resid @ resid))


def zero_effects(years: Sequence[int]) -> YearEffects:
    years = tuple(years)
    return YearEffects(years, np.zeros(len(years)), (years[0] + years[-1]) / 2.0, {})


@dataclass(frozen=True)
class GrowthEstimate:
    scope: Scope
    period: tuple[int, int]
    y_hat: float
    sigma_y: float
    n_years: int


def estimate_growth(series: AggregateSeries, effects: YearEffects, period: tuple[int, int]) -> GrowthEstimate:
    """Average annual growth in percent over ``period`` after removing year effects.

    Growth in year ``t`` uses years ``t - 1`` and ``t``, so the year before the
    period must be present too.
    """
    a, b = period
    if a > b:
        raise ValueError(f"empty period {a}-{b}")
    need = range(a - 1, b + 1)
    lookup = dict(zip(series.years, series.log))
    missing = [t for t in need if t not in lookup or t not in effects.years]
    if missing:
        raise DataError(f"years {missing} are not covered by the series and year effects")
    adj = np.array([lookup[t] - effects[t] for t in need])
    if not np.isfinite(adj).all():
        bad = [t for t, v in zip(need, adj) if not math.isfinite(v)]
        raise DataError(f"log light undefined (zero total) in {bad}")
    g = np.diff(adj)
    if g.size < 2:
        raise InsufficientDataError(f"{g.size} growth observation(s); at least 2 are needed")
    return GrowthEstimate(series.scope, (a, b), 100.0 * float(g.mean()), 100.0 * float(g.std()), int(g.size))
