"""Synthetic panels with planted dynamics, used as ground truth in tests.

All randomness comes from a counter-based generator: every draw is a hash
of ``(seed, stream, year, pixel)``, so a panel is identical whether it is
generated whole, band by band, or in any order.

Each year a lit pixel is active with probability ``active_fraction``; an
active pixel's change is drawn from a discrete law on the nonzero integers
in ``[-31, 31]`` whose variance is exactly ``sigma(t)**2``.  Changes are
integrated into DN levels starting from ``base_dn`` and clipped to 0..63.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from ._bands import DEFAULT_CHUNK_ROWS, iter_bands
from .config import parse_kv
from .errors import FeasibilityError
from .grid import DN_MAX, DTYPE_U8, NLG1_MAGIC, NODATA, GridGeometry, Panel, RasterGrid, _pack_header
from .growth import AggregateSeries, _effect_basis
from .regions import Region, RegionMask, Scope, write_mask

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

STREAM_LIT = 1
STREAM_ACTIVE = 2
STREAM_CHANGE = 3
STREAM_STATE = 4
STREAM_NOISE = 5
STREAM_NOISE2 = 6

MAX_STEP = 31


def _mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _M64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _M64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def stream_key(seed: int, stream: int, year: int) -> int:
    k = _mix64((seed & _M64) ^ (stream * _GOLDEN & _M64))
    return _mix64((k + (year & _M64) * 0xD1B54A32D192ED03) & _M64)


def counter_uniform(seed: int, stream: int, year: int, counters) -> np.ndarray:
    """Uniform doubles in [0, 1), one per counter (e.g. a flat pixel index)."""
    key = np.uint64(stream_key(seed, stream, year))
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (c + np.uint64(1)) * np.uint64(_GOLDEN) + key
        z = _mix64_array(z)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def counter_normal(seed: int, stream: int, year: int, counters) -> np.ndarray:
    u1 = counter_uniform(seed, stream, year, counters)
    u2 = counter_uniform(seed, stream + 1000, year, counters)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class ChangeLaw:
    """Discrete law on the nonzero integers of ``[-MAX_STEP, MAX_STEP]``."""

    support: np.ndarray
    prob: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.prob @ self.support)

    @property
    def std(self) -> float:
        m = self.mean
        return math.sqrt(float(self.prob @ (self.support - m) ** 2))

    def sample(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.prob)
        k = np.searchsorted(cdf, u, side="right")
        return self.support[np.minimum(k, self.support.size - 1)]


def _law(tau: float, drift: float) -> ChangeLaw:
    j = np.array([k for k in range(-MAX_STEP, MAX_STEP + 1) if k], dtype=np.int64)
    logw = -((j - drift) ** 2) / (2.0 * tau * tau)
    w = np.exp(logw - logw.max())
    return ChangeLaw(j, w / w.sum())


def change_law(sigma: float, drift: float = 0.0) -> ChangeLaw:
    """Gaussian-shaped law with standard deviation exactly ``sigma``."""
    lo, hi = math.log(0.05), math.log(1e3)
    f = lambda lt: _law(math.exp(lt), drift).std - sigma
    flo, fhi = f(lo), f(hi)
    if abs(flo) < 1e-12:
        return _law(math.exp(lo), drift)
    if not flo < 0 < fhi:
        smin, smax = sigma - flo, sigma - fhi
        raise FeasibilityError(
            f"dispersion {sigma} outside the attainable range [{smin:.4f}, {smax:.4f}] for DN steps"
        )
    return _law(math.exp(brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)), drift)


def _per_year(value, n: int, name: str) -> tuple[float, ...]:
    if np.ndim(value) == 0:
        return (float(value),) * n
    out = tuple(float(v) for v in value)
    if len(out) != n:
        raise ValueError(f"{name} needs {n} entries (one per difference year), got {len(out)}")
    return out


def linear_schedule(start: float, stop: float, n: int) -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(start, stop, n))


@dataclass(frozen=True)
class PanelSpec:
    geometry: GridGeometry
    first_year: int
    last_year: int
    sigma: Sequence[float] | float = 2.0
    active_fraction: Sequence[float] | float = 0.05
    lit_fraction: float = 1.0
    drift: Sequence[float] | float = 0.0
    base_dn: int = 20
    n_regions: int = 4
    seed: int = 0
    max_clip_rate: float = 0.01

    def __post_init__(self):
        n = self.last_year - self.first_year
        if n < 1:
            raise ValueError("a synthetic panel needs at least two years")
        object.__setattr__(self, "sigma", _per_year(self.sigma, n, "sigma"))
        object.__setattr__(self, "active_fraction", _per_year(self.active_fraction, n, "active_fraction"))
        object.__setattr__(self, "drift", _per_year(self.drift, n, "drift"))
        if any(not 0 <= f <= 1 for f in self.active_fraction):
            raise ValueError("active_fraction must lie in [0, 1]")
        if any(s <= 0 for s in self.sigma):
            raise ValueError("dispersion schedule must be positive")
        if not 0 < self.lit_fraction <= 1:
            raise ValueError("lit_fraction must lie in (0, 1]")
        if not 0 <= self.base_dn <= DN_MAX:
            raise ValueError(f"base_dn must lie in 0..{DN_MAX}")
        if not 0 <= self.n_regions <= self.geometry.width:
            raise ValueError("n_regions must be between 0 and the grid width")

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(range(self.first_year, self.last_year + 1))

    @property
    def diff_years(self) -> tuple[int, ...]:
        return self.years[1:]

    def laws(self) -> list[ChangeLaw]:
        return [change_law(s, d) for s, d in zip(self.sigma, self.drift)]


@dataclass
class GroundTruth:
    sigma: dict[int, float]
    law_mean: dict[int, float]
    active_fraction: dict[int, float]
    seed: int
    active_events: int = 0
    clipped_events: int = 0
    kernel: list[list[float]] | None = None
    trends: dict[str, float] = field(default_factory=dict)
    gamma: dict[int, float] = field(default_factory=dict)

    @property
    def clip_rate(self) -> float:
        return self.clipped_events / self.active_events if self.active_events else 0.0

    def to_json(self) -> str:
        d = asdict(self)
        d["clip_rate"] = self.clip_rate
        return json.dumps(d, indent=2, sort_keys=True)


def _truth(spec: PanelSpec, laws) -> GroundTruth:
    return GroundTruth(
        sigma=dict(zip(spec.diff_years, spec.sigma)),
        law_mean={y: law.mean for y, law in zip(spec.diff_years, laws)},
        active_fraction=dict(zip(spec.diff_years, spec.active_fraction)),
        seed=spec.seed,
    )


def _band(spec: PanelSpec, laws, r0: int, r1: int):
    """DN levels of rows ``r0:r1`` for every year, plus (active, clipped) counts."""
    w = spec.geometry.width
    idx = np.arange(r0 * w, r1 * w, dtype=np.uint64)
    out = np.zeros((len(spec.years), r1 - r0, w), dtype=np.uint8)
    if spec.lit_fraction >= 1.0:
        lit_idx = idx
    else:
        lit_idx = idx[counter_uniform(spec.seed, STREAM_LIT, 0, idx) < spec.lit_fraction]
    pos = (lit_idx - np.uint64(r0 * w)).astype(np.int64)
    level = np.full(lit_idx.size, spec.base_dn, dtype=np.int64)
    flat0 = out[0].reshape(-1)
    flat0[pos] = level
    n_active = n_clipped = 0
    for k, (year, f, law) in enumerate(zip(spec.diff_years, spec.active_fraction, laws), start=1):
        if f > 0 and lit_idx.size:
            hit = np.flatnonzero(counter_uniform(spec.seed, STREAM_ACTIVE, year, lit_idx) < f)
            step = law.sample(counter_uniform(spec.seed, STREAM_CHANGE, year, lit_idx[hit]))
            new = level[hit] + step
            clipped = (new < 0) | (new > DN_MAX)
            n_active += int(hit.size)
            n_clipped += int(clipped.sum())
            level[hit] = np.clip(new, 0, DN_MAX)
        out[k].reshape(-1)[pos] = level
    return out, n_active, n_clipped


def _region_ids(spec: PanelSpec, r0: int, r1: int) -> np.ndarray:
    """Vertical stripes of equal width, ids 1..n_regions."""
    w = spec.geometry.width
    if spec.n_regions == 0:
        return np.zeros((r1 - r0, w), dtype=np.uint16)
    cols = (np.arange(w) * spec.n_regions // w + 1).astype(np.uint16)
    return np.broadcast_to(cols, (r1 - r0, w)).copy()


def region_table(spec: PanelSpec) -> list[Region]:
    return [Region(i, f"Region {i}", "country") for i in range(1, spec.n_regions + 1)]


def _check_clipping(spec, truth):
    if truth.clip_rate >= spec.max_clip_rate:
        raise FeasibilityError(
            f"clipping rate {truth.clip_rate:.4%} reaches the {spec.max_clip_rate:.2%} limit; "
            "lower the dispersion or the active fraction"
        )


def gen_panel(spec: PanelSpec, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> tuple[Panel, RegionMask, GroundTruth]:
    laws = spec.laws()
    g = spec.geometry
    data = np.zeros((len(spec.years), g.height, g.width), dtype=np.uint8)
    truth = _truth(spec, laws)
    for r0, r1 in iter_bands(g.height, chunk_rows):
        band, na, nc = _band(spec, laws, r0, r1)
        data[:, r0:r1] = band
        truth.active_events += na
        truth.clipped_events += nc
    _check_clipping(spec, truth)
    panel = Panel([RasterGrid(g, y, data[k]) for k, y in enumerate(spec.years)])
    mask = RegionMask(g, _region_ids(spec, 0, g.height), region_table(spec))
    return panel, mask, truth


def write_panel(spec: PanelSpec, out_dir, *, chunk_rows: int = DEFAULT_CHUNK_ROWS,
                with_mask: bool = True) -> GroundTruth:
    """Stream a synthetic panel to ``out_dir`` without holding a full year in memory.

    Writes ``<year>.nlg`` files, and unless ``with_mask`` is false also
    ``mask.rmsk`` and ``regions.csv``; always writes ``ground_truth.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    laws = spec.laws()
    g = spec.geometry
    truth = _truth(spec, laws)
    files = [open(out / f"{y}.nlg", "wb") for y in spec.years]
    try:
        for fh, y in zip(files, spec.years):
            fh.write(_pack_header(NLG1_MAGIC, g, y, DTYPE_U8, NODATA))
        for r0, r1 in iter_bands(g.height, chunk_rows):
            band, na, nc = _band(spec, laws, r0, r1)
            truth.active_events += na
            truth.clipped_events += nc
            for fh, rows in zip(files, band):
                fh.write(rows.tobytes())
    finally:
        for fh in files:
            fh.close()
    if with_mask:
        # Mask ids only depend on the column, so the full grid is cheap to build.
        mask = RegionMask(g, _region_ids(spec, 0, g.height), region_table(spec))
        write_mask(mask, out / "mask.rmsk", out / "regions.csv")
    (out / "ground_truth.json").write_text(truth.to_json() + "\n")
    _check_clipping(spec, truth)
    return truth


def check_stochastic(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (3, 3) or (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("kernel must be a 3x3 row-stochastic matrix")
    return P


def stationary_law(P) -> np.ndarray:
    """A stationary distribution of ``P`` from the linear system ``pi (P - I) = 0``."""
    P = check_stochastic(P)
    A = np.vstack([P.T - np.eye(3), np.ones((1, 3))])
    b = np.array([0.0, 0.0, 0.0, 1.0])
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def gen_state_sequences(P, n_pixels: int, n_years: int, seed: int) -> np.ndarray:
    """``(n_years, n_pixels)`` int8 states (0=NEG, 1=NEU, 2=POS), Markov under ``P``."""
    P = check_stochastic(P)
    pix = np.arange(n_pixels, dtype=np.uint64)
    out = np.empty((n_years, n_pixels), dtype=np.int8)
    if n_years == 0:
        return out
    cdf0 = np.cumsum(stationary_law(P))
    u = counter_uniform(seed, STREAM_STATE, 0, pix)
    state = np.minimum(np.searchsorted(cdf0, u, side="right"), 2)
    out[0] = state
    cdf = np.cumsum(P, axis=1)
    for t in range(1, n_years):
        u = counter_uniform(seed, STREAM_STATE, t, pix)
        nxt = (u[:, None] >= cdf[state]).sum(axis=1)
        state = np.minimum(nxt, 2)
        out[t] = state
    return out


def state_grid_pair(states: np.ndarray, year: int = 2000, geometry: GridGeometry | None = None):
    """Wrap rows of :func:`gen_state_sequences` as consecutive ``StateGrid`` objects."""
    from .markov import StateGrid
    from .regions import WORLD

    n = states.shape[1]
    geometry = geometry or GridGeometry(n, 1, 0.0, float(n), 0.0, 1.0)
    idx = np.arange(n, dtype=np.int64)
    return [StateGrid(geometry, year + t, WORLD, idx, states[t], math.nan) for t in range(states.shape[0])]


def gen_growth_series(
    n_regions: int,
    years: Sequence[int],
    seed: int,
    trend_range: tuple[float, float] = (0.0, 0.06),
    effect_scale: float = 0.05,
    noise: Sequence[float] | float = 0.0,
) -> tuple[list[AggregateSeries], GroundTruth]:
    """Region log-light series with planted trends and year effects.

    Planted year effects satisfy the zero-sum / zero-trend normalisation.
    ``noise`` is a per-region standard deviation (heteroskedastic if a list).
    """
    years = tuple(years)
    T = len(years)
    t_mid = (years[0] + years[-1]) / 2.0
    tau = np.asarray(years, dtype=np.float64) - t_mid
    regions = np.arange(n_regions, dtype=np.uint64)
    lo, hi = trend_range
    trends = lo + (hi - lo) * counter_uniform(seed, STREAM_NOISE, 1, regions)
    levels = 8.0 + 4.0 * counter_uniform(seed, STREAM_NOISE, 2, regions)
    if T >= 3:
        raw = counter_normal(seed, STREAM_NOISE, 3, np.arange(T, dtype=np.uint64))
        basis = _effect_basis(tau)
        gamma = effect_scale * basis @ (basis.T @ raw)
    else:
        gamma = np.zeros(T)
    sd = np.broadcast_to(np.asarray(noise, dtype=np.float64), (n_regions,))
    series = []
    for r in range(n_regions):
        eps = sd[r] * counter_normal(seed, STREAM_NOISE2, r, np.arange(T, dtype=np.uint64))
        log = levels[r] + trends[r] * tau + gamma + eps
        series.append(AggregateSeries.from_log(Scope(r + 1), years, log))
    truth = GroundTruth(sigma={}, law_mean={}, active_fraction={}, seed=seed,
                        trends={f"Region {r + 1}": float(trends[r]) for r in range(n_regions)},
                        gamma={y: float(v) for y, v in zip(years, gamma)})
    return series, truth


def _floats(text: str) -> list[float]:
    text = text.strip()
    if text.startswith("linear:"):
        _, a, b = text.split(":")
        return ["linear", float(a), float(b)]
    return [float(v) for v in text.split(",") if v.strip()]


def parse_panel_spec(path) -> PanelSpec:
    """Read a ``key = value`` synthetic panel description.

    Geometry comes from ``cell_size`` (plus optional bounds) or from explicit
    ``width``/``height`` with bounds.  ``sigma`` accepts a single value, a
    comma-separated list, or ``linear:<first>:<last>``.
    """
    kv = parse_kv(path)
    bounds = {k: float(kv.pop(k)) for k in ("lon_min", "lon_max", "lat_min", "lat_max") if k in kv}
    if "cell_size" in kv:
        geometry = GridGeometry.from_cell_size(float(kv.pop("cell_size")), **bounds)
    else:
        w, h = int(kv.pop("width")), int(kv.pop("height"))
        geometry = GridGeometry(
            w, h,
            bounds.get("lon_min", 0.0), bounds.get("lon_max", float(w)),
            bounds.get("lat_min", 0.0), bounds.get("lat_max", float(h)),
        )
    first, last = int(kv.pop("first_year")), int(kv.pop("last_year"))
    n = last - first
    args = {}
    for key in ("sigma", "active_fraction", "drift"):
        if key in kv:
            vals = _floats(kv.pop(key))
            if vals and vals[0] == "linear":
                vals = linear_schedule(vals[1], vals[2], n)
            args[key] = vals[0] if len(vals) == 1 else vals
    for key, conv in (("lit_fraction", float), ("base_dn", int), ("n_regions", int),
                      ("seed", int), ("max_clip_rate", float)):
        if key in kv:
            args[key] = conv(kv.pop(key))
    if kv:
        raise ValueError(f"unknown synthetic panel keys: {sorted(kv)}")
    return PanelSpec(geometry, first, last, **args)
