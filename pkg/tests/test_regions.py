import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nightlights.errors import ConsistencyError, RegionLookupError
from nightlights.regions import (WORLD, Region, RegionMask, Scope, load_mask, pixels_in, read_table,
                                 scope_indices, write_mask, write_table)

from conftest import geom, make_mask


def test_valid_mask(tmp_path):
    ids = np.array([[0, 1, 2]])
    table = [Region(1, "Germany", "country"), Region(2, "Thailand", "country")]
    write_mask(RegionMask(geom(3, 1), ids, table), tmp_path / "m.rmsk", tmp_path / "m.csv")
    m = load_mask(tmp_path / "m.rmsk", tmp_path / "m.csv")
    assert m.find("Thailand").id == 2
    assert m.ids.tolist() == [[0, 1, 2]]
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "id,name,kind"


def test_unknown_id_in_grid():
    with pytest.raises(ConsistencyError):
        RegionMask(geom(3, 1), [[1, 2, 3]], [Region(1, "a", "country"), Region(2, "b", "state")])


def test_duplicate_table_id(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("id,name,kind\n1,a,country\n1,b,country\n")
    with pytest.raises(ConsistencyError):
        RegionMask(geom(1, 1), [[1]], read_table(p))


def test_zero_id_and_kind_rules():
    with pytest.raises(ConsistencyError):
        RegionMask(geom(1, 1), [[0]], [Region(0, "ocean", "country")])
    with pytest.raises(ConsistencyError):
        RegionMask(geom(1, 1), [[1]], [Region(1, "x", "province")])


def test_pixels_in_examples():
    m = make_mask([[1, 0], [1, 2]])
    assert list(pixels_in(m, WORLD)) == [0, 1, 2, 3]
    assert list(pixels_in(m, Scope(1))) == [0, 2]
    with pytest.raises(RegionLookupError):
        list(pixels_in(m, Scope(9)))


def test_table_roundtrip_unicode(tmp_path):
    rows = [Region(1, "Côte d'Ivoire", "country"), Region(7, "New York, NY", "state")]
    write_table(tmp_path / "t.csv", rows)
    assert read_table(tmp_path / "t.csv") == rows


def test_bbox():
    m = make_mask([[0, 0, 0], [0, 1, 1], [0, 0, 1]])
    assert m.bbox(Scope(1)) == (1, 3, 1, 3)
    assert m.bbox(WORLD) == (0, 3, 0, 3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint16, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 4)))
def test_partition_property(ids):
    m = make_mask(ids)
    parts = [scope_indices(m, s) for s in m.scopes()]
    unassigned = np.flatnonzero(ids.ravel() == 0)
    allpix = np.sort(np.concatenate(parts + [unassigned]))
    assert np.array_equal(allpix, np.arange(ids.size))
    assert list(pixels_in(m, WORLD)) == list(pixels_in(m, WORLD))
