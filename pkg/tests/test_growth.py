import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nightlights.errors import DataError, IdentificationError, InsufficientDataError
from nightlights.growth import (AggregateSeries, aggregate_all, build_aggregate_series, estimate_growth,
                                fit_year_effects, zero_effects)
from nightlights.regions import WORLD, Scope
from nightlights.synth import gen_growth_series

from conftest import make_mask, make_panel, random_panel

YEARS = tuple(range(1992, 2014))


def closed_form_gamma(series):
    """Balanced-panel oracle: for fixed year effects each region's intercept and
    trend are its own OLS fit on [1, tau], so the optimal effects are the part of
    the cross-region mean log series orthogonal to [1, tau]."""
    years = series[0].years
    tau = np.asarray(years, float) - (years[0] + years[-1]) / 2
    X = np.column_stack([np.ones_like(tau), tau])
    ybar = np.mean([s.log for s in series], axis=0)
    coef, *_ = np.linalg.lstsq(X, ybar, rcond=None)
    return ybar - X @ coef


def test_aggregate_example():
    p = make_panel([[[3, 4]], [[3, 255]]])
    s = build_aggregate_series(p)
    assert s.total.tolist() == [7.0, 3.0]
    assert s.log[0] == math.log(7)


def test_aggregate_vs_oracle(rng):
    frames = random_panel(rng, w=9, h=7, years=4)
    ids = rng.integers(0, 4, size=(7, 9))
    mask = make_mask(ids)
    agg = aggregate_all(make_panel(frames), mask, chunk_rows=2, threads=3)
    for scope, series in agg.items():
        for k, f in enumerate(frames):
            sel = (f != 255) if scope.is_world else (f != 255) & (ids == scope.region_id)
            assert series.total[k] == int(f[sel].astype(int).sum())


def test_zero_total_flags_undefined_log():
    s = AggregateSeries(WORLD, (2000, 2001), np.array([0.0, 5.0]))
    assert s.undefined_years == (2000,)
    eff = zero_effects((2000, 2001, 2002))
    with pytest.raises(DataError):
        estimate_growth(AggregateSeries(WORLD, (2000, 2001, 2002), np.array([1.0, 0.0, 2.0])), eff,
                        (2001, 2002))


def test_exponential_series():
    years = tuple(range(2000, 2011))
    log = 5.0 + 0.02 * np.arange(len(years))
    s = AggregateSeries.from_log(Scope(1), years, log)
    est = estimate_growth(s, zero_effects(years), (2001, 2010))
    assert f"{est.y_hat:.2f}" == "2.00" and f"{est.sigma_y:.2f}" == "0.00"
    assert est.n_years == 10


def test_identification_errors():
    s1 = AggregateSeries.from_log(Scope(1), (2000, 2001, 2002), [1.0, 2.0, 3.0])
    s2 = AggregateSeries.from_log(Scope(2), (2000, 2001, 2002), [1.0, 2.5, 3.0])
    with pytest.raises(IdentificationError):
        fit_year_effects([s1])
    two = [AggregateSeries.from_log(Scope(i), (2000, 2001), [1.0, 2.0]) for i in (1, 2)]
    with pytest.raises(IdentificationError):
        fit_year_effects(two)
    fit_year_effects([s1, s2])


def test_period_errors():
    series, _ = gen_growth_series(3, YEARS, seed=1)
    eff = fit_year_effects(series)
    with pytest.raises(InsufficientDataError):
        estimate_growth(series[0], eff, (2000, 2000))
    with pytest.raises(DataError):
        estimate_growth(series[0], eff, (1992, 2000))  # 1991 missing
    with pytest.raises(DataError):
        estimate_growth(series[0], eff, (2000, 2020))


def test_zero_noise_recovery():
    series, truth = gen_growth_series(12, YEARS, seed=3)
    eff = fit_year_effects(series)
    assert np.max(np.abs(eff.gamma - np.array([truth.gamma[y] for y in YEARS]))) < 1e-8
    for s in series:
        b = truth.trends[f"Region {s.scope.region_id}"]
        for period in ((1993, 2006), (2007, 2013)):
            est = estimate_growth(s, eff, period)
            assert abs(est.y_hat - 100 * b) < 1e-8
            assert est.sigma_y < 1e-8


def test_year_effect_normalisation_and_oracle():
    series, _ = gen_growth_series(8, YEARS, seed=5, noise=[0.01 * (k + 1) for k in range(8)])
    eff = fit_year_effects(series)
    tau = np.asarray(YEARS, float) - eff.t_mid
    assert abs(eff.gamma.sum()) < 1e-10
    assert abs(tau @ eff.gamma) < 1e-10
    assert np.max(np.abs(eff.gamma - closed_form_gamma(series))) < 1e-10


def test_noisy_recovery_band():
    # heteroskedastic noise: the estimated trend error is governed by the noise level
    n = 40
    noise = [0.002 + 0.002 * (k % 3) for k in range(n)]
    series, truth = gen_growth_series(n, YEARS, seed=9, noise=noise)
    eff = fit_year_effects(series)
    errs = []
    for s, sd in zip(series, noise):
        b = truth.trends[f"Region {s.scope.region_id}"]
        est = estimate_growth(s, eff, (1993, 2013))
        # mean of 21 differenced noise terms telescopes to (e_T - e_0)/21
        errs.append(abs(est.y_hat - 100 * b) / (100 * sd * math.sqrt(2) / 21))
    assert max(errs) < 5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.integers(0, 5))
def test_level_invariance(seed, k, region):
    series, _ = gen_growth_series(6, YEARS, seed=seed, noise=0.01)
    base = fit_year_effects(series)
    bumped = list(series)
    s = series[region]
    bumped[region] = AggregateSeries.from_log(s.scope, s.years, s.log + math.log(k))
    eff = fit_year_effects(bumped)
    for a, b in zip(series, bumped):
        ea = estimate_growth(a, base, (1993, 2006))
        eb = estimate_growth(b, eff, (1993, 2006))
        assert eb.y_hat == pytest.approx(ea.y_hat, abs=1e-9)
        assert eb.sigma_y == pytest.approx(ea.sigma_y, abs=1e-9)


def _shocked(series, shock):
    return [AggregateSeries.from_log(s.scope, s.years, s.log + shock) for s in series]


def test_common_shock_orthogonal_to_trend_is_absorbed(rng):
    series, _ = gen_growth_series(6, YEARS, seed=2, noise=0.02)
    tau = np.asarray(YEARS, float) - (YEARS[0] + YEARS[-1]) / 2
    X = np.column_stack([np.ones_like(tau), tau])
    raw = rng.normal(size=len(YEARS))
    shock = raw - X @ np.linalg.lstsq(X, raw, rcond=None)[0]
    a, b = fit_year_effects(series), fit_year_effects(_shocked(series, shock))
    assert np.allclose(b.gamma - a.gamma, shock, atol=1e-12)
    for s, t in zip(series, _shocked(series, shock)):
        assert estimate_growth(t, b, (1993, 2006)).y_hat == pytest.approx(
            estimate_growth(s, a, (1993, 2006)).y_hat, abs=1e-9)


def test_single_year_shock_moves_every_region_equally():
    """A shock confined to one year is partly a shift in the common trend under
    the zero-sum / zero-trend normalisation; what stays fixed is the dispersion
    and every cross-region difference of growth."""
    series, _ = gen_growth_series(5, YEARS, seed=4, noise=0.02)
    shock = np.zeros(len(YEARS))
    shock[YEARS.index(2001)] = 0.3
    a, b = fit_year_effects(series), fit_year_effects(_shocked(series, shock))
    tau = np.asarray(YEARS, float) - a.t_mid
    slope = (tau @ shock) / (tau @ tau)
    for s, t in zip(series, _shocked(series, shock)):
        ea, eb = estimate_growth(s, a, (1993, 2013)), estimate_growth(t, b, (1993, 2013))
        assert eb.y_hat - ea.y_hat == pytest.approx(100 * slope, abs=1e-9)
        assert eb.sigma_y == pytest.approx(ea.sigma_y, abs=1e-9)
