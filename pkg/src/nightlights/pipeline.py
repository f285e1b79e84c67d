"""Annual differencing, active-pixel demeaning and change accumulation.

For each pair of consecutive years the per-pixel change ``curr - prev`` is
taken wherever both years carry data.  Pixels whose change is zero are
dropped (saturated or dark pixels fall out this way), and the remaining
"active" changes are centred on their scope-wide mean so that sensor-level
shifts between satellites cancel.

Changes are kept sparse: an ascending array of flat pixel indices plus one
integer per active pixel.  Demeaned values are formed as
``(n * delta - sum) / n`` from exact integers, which makes them correctly
rounded, independent of band size and thread count, and bit-identical
under any constant shift of the deltas.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._bands import DEFAULT_CHUNK_ROWS, map_bands
from .errors import EmptyScopeError, SequencingError, ShapeError
from .grid import GridGeometry, Panel, RasterGrid, write_float_grid
from .regions import WORLD, RegionMask, Scope, in_scope


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DiffGrid:
    """Year-over-year change, stored sparsely.

    ``index``/``delta`` hold the active pixels (defined and nonzero change),
    ``undefined`` the pixels where either year is nodata.  Every other pixel
    has a defined change of exactly zero.
    """

    geometry: GridGeometry
    year_pair: tuple[int, int]
    index: np.ndarray
    delta: np.ndarray
    undefined: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def __post_init__(self):
        if self.index.shape != self.delta.shape:
            raise ShapeError("index and delta must have the same length")

    @classmethod
    def from_dense(cls, geometry, year_pair, deltas, defined=None) -> "DiffGrid":
        d = np.asarray(deltas, dtype=np.int16).ravel()
        ok = np.ones(d.shape, bool) if defined is None else np.asarray(defined, bool).ravel()
        active = ok & (d != 0)
        idx = np.flatnonzero(active)
        return cls(geometry, tuple(year_pair), _frozen(idx), _frozen(d[idx]),
                   _frozen(np.flatnonzero(~ok)))

    @property
    def year(self) -> int:
        return self.year_pair[1]

    @property
    def n_active(self) -> int:
        return int(self.index.size)

    @property
    def defined(self) -> np.ndarray:
        out = np.ones(self.geometry.size, dtype=bool)
        out[self.undefined] = False
        return out.reshape(self.geometry.shape)

    @property
    def active(self) -> np.ndarray:
        """Dense indicator of defined, nonzero change."""
        out = np.zeros(self.geometry.size, dtype=bool)
        out[self.index] = True
        return out.reshape(self.geometry.shape)

    @property
    def deltas(self) -> np.ndarray:
        """Dense int16 changes; undefined pixels read as 0."""
        out = np.zeros(self.geometry.size, dtype=np.int16)
        out[self.index] = self.delta
        return out.reshape(self.geometry.shape)

    def shifted(self, c: int) -> "DiffGrid":
        """Same active set with ``c`` added to every active change."""
        return DiffGrid(self.geometry, self.year_pair, self.index,
                        _frozen(self.delta.astype(np.int16) + np.int16(c)), self.undefined)


def diff_year(
    prev: RasterGrid,
    curr: RasterGrid,
    *,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
    threads: int = 1,
) -> DiffGrid:
    if prev.geometry != curr.geometry:
        raise ShapeError(f"geometry mismatch between {prev.year} and {curr.year}")
    if curr.year != prev.year + 1:
        raise SequencingError(f"cannot difference {prev.year} -> {curr.year}: years not consecutive")
    w = prev.geometry.width

    def band(r0, r1):
        p = prev.read_rows(r0, r1)
        c = curr.read_rows(r0, r1)
        defined = (p != prev.nodata) & (c != curr.nodata)
        d = c.astype(np.int16) - p
        active = (defined & (d != 0)).ravel()
        base = r0 * w
        return (np.flatnonzero(active) + base, d.ravel()[active],
                np.flatnonzero(~defined.ravel()) + base)

    parts = map_bands(band, prev.geometry.height, chunk_rows, threads)
    idx = np.concatenate([p[0] for p in parts]).astype(np.int64, copy=False)
    delta = np.concatenate([p[1] for p in parts]).astype(np.int16, copy=False)
    undef = np.concatenate([p[2] for p in parts]).astype(np.int64, copy=False)
    return DiffGrid(prev.geometry, (prev.year, curr.year), _frozen(idx), _frozen(delta), _frozen(undef))


def panel_diffs(panel: Panel, *, chunk_rows: int = DEFAULT_CHUNK_ROWS, threads: int = 1) -> list[DiffGrid]:
    """Difference every consecutive pair; only two grids are read at a time."""
    return [diff_year(a, b, chunk_rows=chunk_rows, threads=threads) for a, b in panel.pairs()]


def _as_diffs(panel, **kw) -> list[DiffGrid]:
    if isinstance(panel, Panel):
        if len(panel) < 2:
            raise ValueError("a panel needs at least two years to difference")
        return panel_diffs(panel, **kw)
    diffs = list(panel)
    if not diffs:
        raise ValueError("no year pairs to work on")
    return diffs


@dataclass(frozen=True, eq=False)
class DemeanedDiffGrid:
    """Active in-scope changes centred on their scope mean.

    ``values[k]`` belongs to flat pixel ``index[k]``; pixels not listed carry
    no value.  The exact integer moments of the raw changes are kept so that
    dispersion can be computed without rounding error.
    """

    geometry: GridGeometry
    year: int
    scope: Scope
    index: np.ndarray
    delta: np.ndarray
    values: np.ndarray
    scope_sum: int
    sum_sq: int

    @property
    def count(self) -> int:
        return int(self.index.size)

    @property
    def scope_mean(self) -> float:
        return self.scope_sum / self.count

    def to_dense(self) -> np.ndarray:
        out = np.full(self.geometry.size, np.nan)
        out[self.index] = self.values
        return out.reshape(self.geometry.shape)


def demean(diff: DiffGrid, mask: RegionMask | None = None, scope: Scope = WORLD) -> DemeanedDiffGrid:
    if mask is not None and mask.geometry != diff.geometry:
        raise ShapeError("region mask geometry differs from the panel")
    if scope.is_world:
        idx, d = diff.index, diff.delta
    else:
        sel = in_scope(mask, scope, diff.index)
        idx, d = _frozen(diff.index[sel]), diff.delta[sel]
    n = int(idx.size)
    if n == 0:
        raise EmptyScopeError(f"no active pixels in {scope} for {diff.year}")
    d64 = d.astype(np.int64)
    s = int(d64.sum())
    q = int(np.dot(d64, d64))
    values = _frozen((n * d64 - s) / n)
    return DemeanedDiffGrid(diff.geometry, diff.year, scope, idx, _frozen(d64.astype(np.int16)),
                            values, s, q)


def demean_or_none(diff, mask, scope) -> DemeanedDiffGrid | None:
    try:
        return demean(diff, mask, scope)
    except EmptyScopeError:
        return None


@dataclass(frozen=True, eq=False)
class CumulativeChangeGrid:
    """Per-pixel sum (or mean) of demeaned changes over a span of years.

    ``values`` is dense with NaN where the pixel was never active in the
    span; ``counts`` is the number of active years per pixel.
    """

    geometry: GridGeometry
    years: tuple[int, int]
    scope: Scope
    values: np.ndarray
    counts: np.ndarray
    empty_years: tuple[int, ...] = ()
    kind: str = "sum"

    @property
    def valued(self) -> np.ndarray:
        return self.counts > 0

    def valued_values(self) -> np.ndarray:
        return self.values[self.valued]


def _select(diffs: Sequence[DiffGrid], years: tuple[int, int] | None) -> list[DiffGrid]:
    if years is None:
        return list(diffs)
    a, b = years
    available = {d.year for d in diffs}
    if a > b:
        raise ValueError(f"empty year range {a}-{b}")
    missing = [y for y in range(a, b + 1) if y not in available]
    if missing:
        raise ValueError(f"years {missing} are not difference years of the panel")
    return [d for d in diffs if a <= d.year <= b]


def _accumulate(geometry, demeaned: Sequence[DemeanedDiffGrid]):
    """Neumaier-compensated per-pixel sums, years in ascending order."""
    total = np.zeros(geometry.size)
    comp = np.zeros(geometry.size)
    counts = np.zeros(geometry.size, dtype=np.int32)
    for dm in demeaned:
        i, v = dm.index, dm.values
        s = total[i]
        t = s + v
        big = np.abs(s) >= np.abs(v)
        comp[i] += np.where(big, (s - t) + v, (v - t) + s)
        total[i] = t
        counts[i] += 1
    return total + comp, counts


def _span(panel, mask, scope, years, kind, **kw) -> CumulativeChangeGrid:
    diffs = _select(_as_diffs(panel, **kw), years)
    demeaned, empty = [], []
    for d in diffs:
        dm = demean_or_none(d, mask, scope)
        if dm is None:
            empty.append(d.year)
        else:
            demeaned.append(dm)
    if not demeaned:
        raise EmptyScopeError(f"no active pixels in {scope} in any year of the span")
    geometry = diffs[0].geometry
    total, counts = _accumulate(geometry, demeaned)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = total / counts if kind == "mean" else total
    values = np.where(counts > 0, values, np.nan)
    return CumulativeChangeGrid(
        geometry,
        (diffs[0].year, diffs[-1].year),
        scope,
        _frozen(values.reshape(geometry.shape)),
        _frozen(counts.reshape(geometry.shape)),
        tuple(empty),
        kind,
    )


def cumulative_change(panel, mask: RegionMask | None = None, scope: Scope = WORLD,
                      years: tuple[int, int] | None = None, **kw) -> CumulativeChangeGrid:
    """Sum of demeaned annual changes per pixel.

    ``panel`` may be a :class:`Panel` or a precomputed list of
    :class:`DiffGrid`.  Years in which the scope has no active pixel add
    nothing and are listed in ``empty_years``.
    """
    return _span(panel, mask, scope, years, "sum", **kw)


def period_average(panel, mask: RegionMask | None, scope: Scope, years: tuple[int, int],
                   **kw) -> CumulativeChangeGrid:
    """Mean demeaned change per pixel over the years in which it was active."""
    return _span(panel, mask, scope, years, "mean", **kw)


def dump_demeaned(d: DemeanedDiffGrid, path) -> None:
    write_float_grid(path, d.geometry, d.year, d.to_dense())


def export_sparse_csv(d: DemeanedDiffGrid, path) -> None:
    """Write ``i,j,value`` rows (column, row, value) in row-major order."""
    w = d.geometry.width
    with open(path, "w") as fh:
        fh.write("i,j,value\n")
        for k, v in zip(d.index.tolist(), d.values.tolist()):
            fh.write(f"{k % w},{k // w},{v!r}\n")
