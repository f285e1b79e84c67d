"""Regenerate the frozen rendering fixtures in ``golden/``.

Only rerun this after a deliberate change to the colour encoding; the
acceptance suite compares against these bytes.
"""
from pathlib import Path

import numpy as np

from nightlights.grid import GridGeometry
from nightlights.pipeline import CumulativeChangeGrid
from nightlights.regions import WORLD
from nightlights.render import ImageBuffer, color_of, ppm_bytes, render_change_map

HERE = Path(__file__).parent / "golden"

COLOR_CASES = {"zero": 0.0, "plus4sigma": 4.0, "minus1p5sigma": -1.5}


def map16() -> CumulativeChangeGrid:
    r, c = np.mgrid[0:16, 0:16].astype(np.float64)
    v = (r - 7.5) * (c - 7.5) / 8.0
    v[(r + c) % 7 == 0] = np.nan
    v[3, 12] = 60.0
    v[12, 3] = -55.0
    v[8, 8] = 0.0
    counts = (~np.isnan(v)).astype(np.int32)
    return CumulativeChangeGrid(GridGeometry(16, 16, 0.0, 16.0, 0.0, 16.0), (2001, 2013), WORLD,
                                v, counts, (), "sum")


def color_case_bytes(value: float) -> bytes:
    px = np.array([[color_of(value, 1.0)]], dtype=np.uint8)
    return ppm_bytes(ImageBuffer.from_array(px))


def main():
    HERE.mkdir(exist_ok=True)
    for name, v in COLOR_CASES.items():
        (HERE / f"color_{name}.ppm").write_bytes(color_case_bytes(v))
    (HERE / "map16.ppm").write_bytes(ppm_bytes(render_change_map(map16())))


if __name__ == "__main__":
    main()
