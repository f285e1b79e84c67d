import json
import math

import numpy as np
import pytest

from nightlights.errors import FeasibilityError
from nightlights.grid import Panel
from nightlights.markov import estimate_transitions
from nightlights.regions import load_mask
from nightlights.stats import sigma_series
from nightlights.synth import (PanelSpec, change_law, counter_uniform, gen_panel, gen_state_sequences,
                               parse_panel_spec, stationary_law, state_grid_pair, write_panel)

from conftest import geom

BIRTH_DEATH = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])


def test_counter_uniform_order_free():
    idx = np.arange(1000, dtype=np.uint64)
    full = counter_uniform(7, 3, 2000, idx)
    perm = np.random.default_rng(0).permutation(1000)
    assert np.array_equal(counter_uniform(7, 3, 2000, idx[perm]), full[perm])
    assert not np.array_equal(counter_uniform(8, 3, 2000, idx), full)
    assert not np.array_equal(counter_uniform(7, 3, 2001, idx), full)
    assert ((full >= 0) & (full < 1)).all()
    assert abs(full.mean() - 0.5) < 0.03


@pytest.mark.parametrize("s", [1.0, 1.7, 2.0, 5.0, 12.0])
@pytest.mark.parametrize("drift", [0.0, 0.4])
def test_change_law_hits_target(s, drift):
    law = change_law(s, drift)
    assert law.std == pytest.approx(s, abs=1e-9)
    assert 0 not in law.support and abs(law.support).max() == 31
    assert law.prob.sum() == pytest.approx(1.0)


def test_change_law_infeasible():
    with pytest.raises(FeasibilityError):
        change_law(0.5)
    with pytest.raises(FeasibilityError):
        change_law(25.0)


def test_spec_validation():
    g = geom(10, 10)
    with pytest.raises(ValueError):
        PanelSpec(g, 2000, 2000)
    with pytest.raises(ValueError):
        PanelSpec(g, 2000, 2002, sigma=[1.0])
    with pytest.raises(ValueError):
        PanelSpec(g, 2000, 2002, sigma=-1.0)


def test_determinism_and_chunking():
    spec = PanelSpec(geom(40, 30), 2000, 2004, sigma=2.0, active_fraction=0.2, seed=11)
    p1, m1, _ = gen_panel(spec)
    p2, _, _ = gen_panel(spec, chunk_rows=7)
    for a, b in zip(p1, p2):
        assert a == b
    p3, _, _ = gen_panel(PanelSpec(geom(40, 30), 2000, 2004, sigma=2.0, active_fraction=0.2, seed=12))
    assert any(a != b for a, b in zip(p1, p3))
    assert sorted(set(m1.ids.ravel().tolist())) == [1, 2, 3, 4]


def test_planted_sigma_small():
    spec = PanelSpec(geom(300, 200), 2000, 2003, sigma=[2.0, 3.0, 4.0], active_fraction=0.3, seed=1)
    panel, _, truth = gen_panel(spec)
    got = sigma_series(panel)
    for e in got.entries:
        n = e.n
        assert abs(e.sigma / truth.sigma[e.year] - 1) < 4 / math.sqrt(2 * n)
    assert truth.clip_rate < 0.01


def test_zero_active_year_gives_nan():
    spec = PanelSpec(geom(20, 20), 2000, 2003, sigma=2.0, active_fraction=[0.2, 0.0, 0.2], seed=2)
    panel, _, _ = gen_panel(spec)
    s = sigma_series(panel).as_dict()
    assert math.isnan(s[2002]) and not math.isnan(s[2001])


def test_clipping_guard():
    spec = PanelSpec(geom(50, 50), 2000, 2010, sigma=15.0, active_fraction=1.0, seed=3)
    with pytest.raises(FeasibilityError):
        gen_panel(spec)


def test_write_panel_matches_memory(tmp_path):
    spec = PanelSpec(geom(33, 21), 2000, 2003, sigma=2.5, active_fraction=0.3, lit_fraction=0.5, seed=5)
    truth = write_panel(spec, tmp_path, chunk_rows=4)
    panel, mask, truth2 = gen_panel(spec)
    disk = Panel.from_dir(tmp_path, lazy=False)
    assert all(a == b for a, b in zip(disk, panel))
    m = load_mask(tmp_path / "mask.rmsk", tmp_path / "regions.csv")
    assert np.array_equal(m.ids, mask.ids)
    doc = json.loads((tmp_path / "ground_truth.json").read_text())
    assert doc["clipped_events"] == truth.clipped_events == truth2.clipped_events
    assert doc["sigma"]["2001"] == 2.5


def test_parse_spec(tmp_path):
    f = tmp_path / "spec.txt"
    f.write_text("# tiny\nwidth = 8\nheight = 4\nfirst_year = 2000\nlast_year = 2004\n"
                 "sigma = linear:5:2\nactive_fraction = 0.1\nseed = 9\n")
    spec = parse_panel_spec(f)
    assert spec.sigma == (5.0, 4.0, 3.0, 2.0)
    assert spec.seed == 9 and spec.geometry.width == 8
    f.write_text("width = 8\nheight = 4\nfirst_year = 2000\nlast_year = 2004\nbogus = 1\n")
    with pytest.raises(ValueError):
        parse_panel_spec(f)


def test_state_sequences_identity_and_iid():
    s = gen_state_sequences(np.eye(3), 500, 6, seed=1)
    assert (s == s[0]).all()
    P = np.tile([0.2, 0.5, 0.3], (3, 1))
    s = gen_state_sequences(P, 200_000, 3, seed=2)
    freq = np.bincount(s[2], minlength=3) / 200_000
    assert np.allclose(freq, [0.2, 0.5, 0.3], atol=0.005)


def test_state_sequences_reject_non_stochastic():
    with pytest.raises(ValueError):
        gen_state_sequences(np.ones((3, 3)), 10, 2, seed=0)
    with pytest.raises(ValueError):
        gen_state_sequences(np.eye(2), 10, 2, seed=0)


def test_state_sequences_recover_kernel():
    s = gen_state_sequences(BIRTH_DEATH, 1_000_000, 2, seed=3)
    prev, curr = state_grid_pair(s)
    tm = estimate_transitions(prev, curr)
    assert np.max(np.abs(tm.p - BIRTH_DEATH)) < 0.01
    assert np.allclose(stationary_law(BIRTH_DEATH), [0.25, 0.5, 0.25])
