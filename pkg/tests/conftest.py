import numpy as np
import pytest

from nightlights.grid import GridGeometry, Panel, RasterGrid
from nightlights.regions import Region, RegionMask


def geom(w, h):
    return GridGeometry(w, h, 0.0, float(w), 0.0, float(h))


def make_panel(frames, first_year=2000):
    """Panel from a list of equally shaped 2-D DN arrays."""
    frames = [np.asarray(f, dtype=np.uint8) for f in frames]
    h, w = frames[0].shape
    g = geom(w, h)
    return Panel([RasterGrid(g, first_year + k, f) for k, f in enumerate(frames)])


def make_mask(ids, names=None):
    ids = np.asarray(ids)
    h, w = ids.shape
    present = sorted(int(i) for i in np.unique(ids) if i)
    names = names or {i: f"R{i}" for i in present}
    return RegionMask(geom(w, h), ids, [Region(i, names[i], "country") for i in present])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_panel(rng, w=7, h=5, years=5, lo=0, hi=63, p_nodata=0.05, p_change=0.6):
    base = rng.integers(lo, hi + 1, size=(h, w))
    frames = [base]
    for _ in range(years - 1):
        step = rng.integers(-4, 5, size=(h, w)) * (rng.random((h, w)) < p_change)
        frames.append(np.clip(frames[-1] + step, 0, 63))
    out = []
    for f in frames:
        f = f.astype(np.uint8)
        f[rng.random((h, w)) < p_nodata] = 255
        out.append(f)
    return out


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
