"""Three-state growth persistence model.

Demeaned changes are classified against the year's cross-sectional
dispersion into decay / neutral / growth, transitions between consecutive
years are tallied into a row-stochastic matrix (rows = source state), and
the matrix is raised to its limiting power.  The diagonal of the limit gives
the long-run persistence of each state.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .errors import EmptyEstimateError, EmptyScopeError, UndefinedChainError
from .grid import GridGeometry
from .pipeline import DemeanedDiffGrid, _as_diffs, demean_or_none
from .regions import WORLD, RegionMask, Scope
from .stats import cross_sectional_sigma

SQUARING_TOL = 1e-12
ERGODIC_TOL = 1e-10
MAX_SQUARINGS = 200


class GrowthState(IntEnum):
    NEG = 0
    NEU = 1
    POS = 2


NEG, NEU, POS = GrowthState.NEG, GrowthState.NEU, GrowthState.POS


@dataclass(frozen=True, eq=False)
class StateGrid:
    geometry: GridGeometry
    year: int
    scope: Scope
    index: np.ndarray
    states: np.ndarray
    sigma_used: float

    def counts(self) -> np.ndarray:
        return np.bincount(self.states, minlength=3)


def classify(d: DemeanedDiffGrid, sigma: float) -> StateGrid:
    """``POS`` above ``sigma``, ``NEG`` below ``-sigma``, ``NEU`` in between (inclusive)."""
    if not sigma >= 0:
        raise ValueError(f"threshold must be a non-negative number, got {sigma}")
    v = d.values
    states = np.full(v.shape, NEU, dtype=np.int8)
    states[v > sigma] = POS
    states[v < -sigma] = NEG
    states.flags.writeable = False
    return StateGrid(d.geometry, d.year, d.scope, d.index, states, float(sigma))


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    year: int
    p: np.ndarray
    counts: np.ndarray
    scope: Scope

    @property
    def n_transitions(self) -> int:
        return int(self.counts.sum())

    @property
    def complete(self) -> bool:
        return bool((self.counts.sum(axis=1) > 0).all())


def from_counts(counts, year: int = 0, scope: Scope = WORLD) -> TransitionMatrix:
    counts = np.asarray(counts, dtype=np.int64).reshape(3, 3)
    rows = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / rows
    p[rows[:, 0] == 0] = np.nan
    return TransitionMatrix(year, p, counts, scope)


def estimate_transitions(prev: StateGrid, curr: StateGrid) -> TransitionMatrix:
    """Tally state pairs over pixels that hold a state in both years."""
    if curr.year != prev.year + 1:
        raise ValueError(f"state grids {prev.year} and {curr.year} are not consecutive")
    if curr.scope != prev.scope:
        raise ValueError("state grids belong to different scopes")
    if prev.index.size == 0 or curr.index.size == 0:
        raise EmptyEstimateError(f"no pixel holds a state in both {prev.year} and {curr.year}")
    # both index arrays are ascending and unique
    pos_c = np.minimum(np.searchsorted(prev.index, curr.index), prev.index.size - 1)
    both = prev.index[pos_c] == curr.index
    if not both.any():
        raise EmptyEstimateError(f"no pixel holds a state in both {prev.year} and {curr.year}")
    src = prev.states[pos_c[both]].astype(np.int64)
    dst = curr.states[both].astype(np.int64)
    counts = np.bincount(3 * src + dst, minlength=9).reshape(3, 3)
    return from_counts(counts, curr.year, curr.scope)


@dataclass(frozen=True, eq=False)
class StationaryResult:
    year: int
    pi: np.ndarray
    limit: np.ndarray
    a_pp: float
    a_00: float
    a_mm: float
    converged: bool
    ergodic: bool
    iterations: int
    n_transitions: int = 0

    @classmethod
    def undefined(cls, year: int, n_transitions: int = 0) -> "StationaryResult":
        nan3 = np.full(3, np.nan)
        return cls(year, nan3, np.full((3, 3), np.nan), math.nan, math.nan, math.nan,
                   False, False, 0, n_transitions)


def stationary(P: TransitionMatrix | np.ndarray) -> StationaryResult:
    """Limit of ``P**n`` by repeated squaring.

    Converged means successive squarings agree to 1e-12 in max norm and the
    limit is invariant under one more step of ``P``; the second test rejects
    periodic chains whose even powers settle.  For an ergodic chain (all
    rows of the limit equal within 1e-10) ``pi`` is that common row.  For a
    converged reducible chain ``pi`` is the mean of the limit's rows, which
    is still stationary, and a warning is issued.
    """
    if isinstance(P, TransitionMatrix):
        year, p, n_tr = P.year, np.asarray(P.p, dtype=np.float64), P.n_transitions
    else:
        year, p, n_tr = 0, np.asarray(P, dtype=np.float64), 0
    if p.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {p.shape}")
    if np.isnan(p).any():
        raise UndefinedChainError("transition matrix has unestimated rows")

    q = p
    converged = False
    it = 0
    for it in range(1, MAX_SQUARINGS + 1):
        q2 = q @ q
        step = np.max(np.abs(q2 - q))
        q = q2
        if step < SQUARING_TOL:
            converged = np.max(np.abs(q @ p - q)) < SQUARING_TOL
            break
    if not converged:
        return StationaryResult(year, np.full(3, np.nan), q, math.nan, math.nan, math.nan,
                                False, False, it, n_tr)

    ergodic = bool(np.max(np.ptp(q, axis=0)) < ERGODIC_TOL)
    pi = q[0].copy() if ergodic else q.mean(axis=0)
    pi /= pi.sum()
    if not ergodic:
        warnings.warn(f"transition matrix for {year} is not ergodic; limit rows differ",
                      RuntimeWarning, stacklevel=2)
    return StationaryResult(year, pi, q, float(q[POS, POS]), float(q[NEU, NEU]),
                            float(q[NEG, NEG]), True, ergodic, it, n_tr)


def gap(s: StationaryResult) -> float:
    """``a_pp - a_mm``; NaN unless the chain converged and is ergodic."""
    if not (s.converged and s.ergodic):
        return math.nan
    return s.a_pp - s.a_mm


@dataclass(frozen=True)
class PeriodMeans:
    a_pp: float
    a_00: float
    a_mm: float
    n_used: int
    n_skipped: int

    def __iter__(self):
        return iter((self.a_pp, self.a_00, self.a_mm))


def period_means(series: Sequence[StationaryResult], period: tuple[int, int]) -> PeriodMeans:
    a, b = period
    inside = [s for s in series if a <= s.year <= b]
    used = [s for s in inside if s.converged and math.isfinite(s.a_pp)]
    if not used:
        return PeriodMeans(math.nan, math.nan, math.nan, 0, len(inside))
    k = len(used)
    return PeriodMeans(
        math.fsum(s.a_pp for s in used) / k,
        math.fsum(s.a_00 for s in used) / k,
        math.fsum(s.a_mm for s in used) / k,
        k,
        len(inside) - k,
    )


def state_grids(panel, mask: RegionMask | None = None, scope: Scope = WORLD,
                **kw) -> list[StateGrid | None]:
    """Classify every difference year of a scope; ``None`` where undefined."""
    out = []
    for diff in _as_diffs(panel, **kw):
        dm = demean_or_none(diff, mask, scope)
        if dm is None or dm.count < 2:
            out.append(None)
            continue
        sigma, _ = cross_sectional_sigma(dm)
        out.append(classify(dm, sigma))
    return out


def transition_series(grids: Sequence[StateGrid | None]) -> list[TransitionMatrix | None]:
    out = []
    for prev, curr in zip(grids, grids[1:]):
        if prev is None or curr is None:
            out.append(None)
            continue
        try:
            out.append(estimate_transitions(prev, curr))
        except EmptyEstimateError:
            out.append(None)
    return out


def markov_series(panel, mask: RegionMask | None = None, scope: Scope = WORLD,
                  **kw) -> list[StationaryResult]:
    """Stationary result for every year that has a predecessor with states.

    Years whose transition matrix cannot be estimated or has an empty row
    come back as :meth:`StationaryResult.undefined`.
    """
    diffs = _as_diffs(panel, **kw)
    grids = state_grids(diffs, mask, scope)
    out = []
    for diff, tm in zip(diffs[1:], transition_series(grids)):
        if tm is None:
            out.append(StationaryResult.undefined(diff.year))
        elif not tm.complete:
            out.append(StationaryResult.undefined(diff.year, tm.n_transitions))
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                out.append(stationary(tm))
    if all(g is None for g in grids):
        raise EmptyScopeError(f"no active pixels in {scope} in any year")
    return out
