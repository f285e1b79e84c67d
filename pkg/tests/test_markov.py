import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nightlights.errors import EmptyEstimateError, EmptyScopeError, UndefinedChainError
from nightlights.markov import (NEG, NEU, POS, StateGrid, StationaryResult, classify, estimate_transitions,
                                from_counts, gap, markov_series, period_means, stationary)
from nightlights.pipeline import DiffGrid, demean
from nightlights.regions import WORLD
from nightlights.stats import cross_sectional_sigma

from conftest import geom, make_panel, random_panel

BIRTH_DEATH = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])
SYM = {"+": POS, "0": NEU, "-": NEG}


def states(seq, year, index=None):
    s = np.array([SYM[c] for c in seq], dtype=np.int8)
    idx = np.arange(len(seq)) if index is None else np.asarray(index)
    return StateGrid(geom(10, 1), year, WORLD, idx, s, 1.0)



def test_classify_examples():
    d = demean(DiffGrid.from_dense(geom(4, 1), (2000, 2001), [20, -16, 3, -7]))
    # mean 0 so values are the deltas; threshold scaled by 10
    sg = classify(d, 15.0)
    assert sg.states.tolist() == [POS, NEG, NEU, NEU]
    sg = classify(d, 16.0)
    assert sg.states[1] == NEU  # boundary is neutral
    sg = classify(d, 0.0)
    assert sg.states.tolist() == [POS, NEG, POS, NEG]
    with pytest.raises(ValueError):
        classify(d, -1.0)


def test_classify_zero_value_neutral_at_zero_threshold():
    d = demean(DiffGrid.from_dense(geom(3, 1), (2000, 2001), [1, -1, 0]))
    assert classify(d, 0.0).states.tolist() == [POS, NEG]
    d = demean(DiffGrid.from_dense(geom(3, 1), (2000, 2001), [2, 1, 3]))  # values 0, -1, 1
    assert classify(d, 0.0).states.tolist() == [NEU, NEG, POS]


def test_transition_tally_example():
    tm = estimate_transitions(states("++0-0+", 2000), states("+00-++", 2001))
    p = tm.p
    assert p[POS, POS] == 2 / 3 and p[POS, NEU] == 1 / 3 and p[POS, NEG] == 0
    assert p[NEU, NEU] == 0.5 and p[NEU, POS] == 0.5
    assert p[NEG, NEG] == 1.0
    assert tm.n_transitions == 6 and tm.year == 2001


def test_transition_identity_and_partial_rows():
    tm = estimate_transitions(states("+0+", 2000), states("+0+", 2001))
    assert tm.p[POS, POS] == 1 and tm.p[NEU, NEU] == 1
    assert np.isnan(tm.p[NEG]).all() and not tm.complete
    with pytest.raises(UndefinedChainError):
        stationary(tm)


def test_transitions_only_over_shared_pixels():
    prev = states("+-0", 2000, index=[0, 2, 5])
    curr = states("-+", 2001, index=[2, 7])
    tm = estimate_transitions(prev, curr)
    assert tm.counts.tolist() == [[1, 0, 0], [0, 0, 0], [0, 0, 0]]  # pixel 2: - to -
    with pytest.raises(EmptyEstimateError):
        estimate_transitions(states("+", 2000, [0]), states("+", 2001, [1]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("+0-"), st.sampled_from("+0-")), min_size=1, max_size=80))
def test_rows_stochastic_property(pairs):
    tm = estimate_transitions(states("".join(a for a, _ in pairs), 2000),
                              states("".join(b for _, b in pairs), 2001))
    rows = tm.counts.sum(axis=1)
    for r in range(3):
        if rows[r]:
            assert abs(tm.p[r].sum() - 1) < 1e-12
            assert ((tm.p[r] >= 0) & (tm.p[r] <= 1)).all()
    assert tm.n_transitions == len(pairs)


def test_stationary_birth_death():
    s = stationary(BIRTH_DEATH)
    assert s.converged and s.ergodic
    assert np.max(np.abs(s.pi - [0.25, 0.5, 0.25])) < 1e-10
    assert (s.a_mm, s.a_00, s.a_pp) == pytest.approx((0.25, 0.5, 0.25), abs=1e-10)
    assert gap(s) == pytest.approx(0.0, abs=1e-10)


def test_stationary_rank_one():
    P = np.tile([0.2, 0.3, 0.5], (3, 1))
    s = stationary(P)
    assert s.converged and s.ergodic and s.iterations == 1
    assert s.pi.tolist() == [0.2, 0.3, 0.5]
    assert (s.a_mm, s.a_00, s.a_pp) == (0.2, 0.3, 0.5)


def test_stationary_identity_not_ergodic():
    with pytest.warns(RuntimeWarning):
        s = stationary(np.eye(3))
    assert s.converged and not s.ergodic
    assert (s.a_pp, s.a_00, s.a_mm) == (1.0, 1.0, 1.0)
    assert math.isnan(gap(s))


def test_stationary_periodic_chain_not_converged():
    P = np.array([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]], dtype=float)
    s = stationary(P)
    assert not s.converged and math.isnan(s.a_pp)


def test_stationary_fixed_point_random(rng):
    for _ in range(300):
        P = rng.random((3, 3)) + 1e-3
        P /= P.sum(axis=1, keepdims=True)
        s = stationary(P)
        assert s.converged and s.ergodic
        assert np.max(np.abs(s.pi @ P - s.pi)) < 1e-10
        assert abs(s.pi.sum() - 1) < 1e-12
        assert np.max(np.ptp(s.limit, axis=0)) < 1e-10
        assert np.allclose([s.a_mm, s.a_00, s.a_pp], s.pi, atol=1e-10)


def test_gap_fixtures():
    def res(a_pp, a_mm):
        return StationaryResult(0, np.zeros(3), np.zeros((3, 3)), a_pp, 0.0, a_mm, True, True, 1)
    assert round(gap(res(9.9, 8.3)), 10) == 1.6
    assert round(gap(res(11.6, 9.4)), 10) == 2.2


def test_period_means():
    def res(y, a):
        return StationaryResult(y, np.zeros(3), np.zeros((3, 3)), a, 0.5, 0.2, True, True, 1)
    series = [res(2000, 0.10), res(2001, 0.12), StationaryResult.undefined(2002)]
    m = period_means(series, (2000, 2002))
    assert m.a_pp == pytest.approx(0.11) and (m.n_used, m.n_skipped) == (2, 1)
    assert period_means(series, (2000, 2000)).a_pp == 0.10
    empty = period_means(series, (2002, 2002))
    assert math.isnan(empty.a_pp) and empty.n_used == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-30, 30).filter(bool), min_size=3, max_size=40), st.integers(2, 5))
def test_classification_scale_coherence(deltas, k):
    a = demean(DiffGrid.from_dense(geom(len(deltas), 1), (2000, 2001), deltas))
    b = demean(DiffGrid.from_dense(geom(len(deltas), 1), (2000, 2001), [k * d for d in deltas]))
    sa, sb = cross_sectional_sigma(a)[0], cross_sectional_sigma(b)[0]
    ca, cb = classify(a, sa), classify(b, sb)
    assert np.array_equal(ca.states, cb.states)
    assert ca.counts().sum() == a.count


def test_markov_series_empty_scope():
    p = make_panel([[[3, 3]], [[3, 3]], [[3, 3]]])
    with pytest.raises(EmptyScopeError):
        markov_series(p)


def test_markov_series_years(rng):
    p = make_panel(random_panel(rng, w=30, h=30, years=5, lo=10, hi=50))
    out = markov_series(p)
    assert [s.year for s in out] == [2002, 2003, 2004]


def test_from_counts():
    tm = from_counts([[1, 1, 0], [0, 0, 0], [0, 0, 4]])
    assert tm.p[0].tolist() == [0.5, 0.5, 0.0]
    assert np.isnan(tm.p[1]).all()
