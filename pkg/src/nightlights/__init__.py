"""Analytics for panels of annual night-light rasters.

Year-over-year pixel changes are demeaned over the active pixels of a
scope, summarised by their cross-sectional dispersion and moments, tracked
with a three-state persistence chain, aggregated into fixed-effects growth
rates, and rendered as diverging change maps.
"""
__version__ = "0.1.0"

from .errors import NightLightsError
from .grid import GridGeometry, Panel, RasterGrid, load_raster, write_raster
from .regions import WORLD, Region, RegionMask, Scope

__all__ = ["GridGeometry", "NightLightsError", "Panel", "RasterGrid", "Region", "RegionMask",
           "Scope", "WORLD", "load_raster", "write_raster", "__version__"]
