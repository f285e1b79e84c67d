"""Raster data model and file I/O for annual luminosity composites.

Two formats are supported:

* ``NLG1``, the native little-endian binary layout (56-byte header followed
  by one unsigned byte per pixel, row-major, row 0 = north);
* Arc/Info ASCII grids, import only.

A float32 sibling of NLG1 tagged ``NLD1`` is used to dump real-valued
change grids for inspection.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._bands import DEFAULT_CHUNK_ROWS, iter_bands
from .errors import FormatError, RangeError, SequencingError, ShapeError, TruncationError

DN_MAX = 63
NODATA = 255

NLG1_MAGIC = b"NLG1"
NLD1_MAGIC = b"NLD1"
FORMAT_VERSION = 1
DTYPE_U8 = 0
DTYPE_F32 = 1

# magic, version, width, height, lon_min, lon_max, lat_min, lat_max,
# year, dtype, nodata, reserved
_HEADER = struct.Struct("<4sHIIddddHBB6s")
HEADER_SIZE = _HEADER.size  # 56


@dataclass(frozen=True)
class GridGeometry:
    """A plate carree lattice of square cells.

    Column ``i`` runs west to east, row ``j`` north to south.
    """

    width: int
    height: int
    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ShapeError(f"grid dimensions must be positive, got {self.width}x{self.height}")
        if not (self.lon_max > self.lon_min and self.lat_max > self.lat_min):
            raise ShapeError("grid bounds must satisfy min < max on both axes")
        dy = (self.lat_max - self.lat_min) / self.height
        if not math.isclose(self.cell_size, dy, rel_tol=1e-9):
            raise ShapeError(f"non-square cells: {self.cell_size!r} x {dy!r} degrees")

    @classmethod
    def from_cell_size(
        cls,
        cell_size: float,
        lon_min: float = -180.0,
        lon_max: float = 180.0,
        lat_min: float = -65.0,
        lat_max: float = 75.0,
    ) -> "GridGeometry":
        width = round((lon_max - lon_min) / cell_size)
        height = round((lat_max - lat_min) / cell_size)
        return cls(width, height, lon_min, lon_max, lat_min, lat_max)

    @classmethod
    def default(cls) -> "GridGeometry":
        """30 arc-second global lattice, 180W-180E by 65S-75N."""
        return cls.from_cell_size(1.0 / 120.0)

    @property
    def cell_size(self) -> float:
        return (self.lon_max - self.lon_min) / self.width

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def lon(self, i):
        """Longitude of the centre of column ``i``."""
        return self.lon_min + (np.asarray(i) + 0.5) * self.cell_size

    def lat(self, j):
        """Latitude of the centre of row ``j``."""
        return self.lat_max - (np.asarray(j) + 0.5) * self.cell_size

    def scaled(self, factor: int) -> "GridGeometry":
        """The same extent with cells ``factor`` times larger."""
        return GridGeometry.from_cell_size(
            self.cell_size * factor, self.lon_min, self.lon_max, self.lat_min, self.lat_max
        )


def _check_dn(values: np.ndarray, nodata: int) -> None:
    bad = (values > DN_MAX) & (values != nodata)
    if bad.any():
        first = int(np.asarray(values)[bad].flat[0])
        raise RangeError(f"intensity {first} outside 0..{DN_MAX} and not the nodata sentinel {nodata}")


class RasterGrid:
    """One year of intensity digital numbers on a fixed lattice.

    The values are immutable.  A grid returned by ``load_raster(..., lazy=True)``
    keeps its payload on disk and serves it band by band through
    :meth:`read_rows`, which lets the streaming passes work on full-resolution
    panels without holding whole years in memory.
    """

    __slots__ = ("geometry", "year", "nodata", "_values", "_path", "_offset")

    def __init__(self, geometry: GridGeometry, year: int, values, nodata: int = NODATA):
        if not (DN_MAX < nodata <= 255):
            raise RangeError(f"nodata sentinel must lie in {DN_MAX + 1}..255, got {nodata}")
        arr = np.asarray(values)
        if arr.size != geometry.size:
            raise ShapeError(f"{arr.size} values for a {geometry.width}x{geometry.height} grid")
        if arr.dtype != np.uint8:
            if arr.dtype.kind not in "iu":
                raise RangeError(f"intensities must be integers, got dtype {arr.dtype}")
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise RangeError("intensities must fit in one unsigned byte")
        arr = np.array(arr, dtype=np.uint8).reshape(geometry.shape)
        _check_dn(arr, nodata)
        arr.flags.writeable = False
        self.geometry = geometry
        self.year = int(year)
        self.nodata = int(nodata)
        self._values = arr
        self._path = None
        self._offset = 0

    @classmethod
    def _on_disk(cls, geometry, year, nodata, path, offset) -> "RasterGrid":
        self = object.__new__(cls)
        self.geometry = geometry
        self.year = int(year)
        self.nodata = int(nodata)
        self._values = None
        self._path = os.fspath(path)
        self._offset = offset
        return self

    @property
    def is_lazy(self) -> bool:
        return self._values is None

    @property
    def values(self) -> np.ndarray:
        """The full ``(height, width)`` array; reads the file for lazy grids."""
        if self._values is not None:
            return self._values
        arr = self.read_rows(0, self.geometry.height)
        arr.flags.writeable = False
        return arr

    def read_rows(self, start: int, stop: int) -> np.ndarray:
        w = self.geometry.width
        if self._values is not None:
            return self._values[start:stop]
        arr = np.fromfile(
            self._path, dtype=np.uint8, count=(stop - start) * w, offset=self._offset + start * w
        )
        if arr.size != (stop - start) * w:
            raise TruncationError(f"{self._path}: payload shrank while reading")
        return arr.reshape(stop - start, w)

    def iter_rows(self, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> Iterator[tuple[int, np.ndarray]]:
        for a, b in iter_bands(self.geometry.height, chunk_rows):
            yield a, self.read_rows(a, b)

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.year == other.year
            and self.nodata == other.nodata
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self):
        g = self.geometry
        where = f" file={self._path!r}" if self.is_lazy else ""
        return f"RasterGrid(year={self.year}, {g.width}x{g.height}, nodata={self.nodata}{where})"


class Panel:
    """Annual grids over consecutive years on one shared lattice."""

    def __init__(self, grids: Sequence[RasterGrid]):
        grids = list(grids)
        if not grids:
            raise ValueError("a panel needs at least one grid")
        geometry = grids[0].geometry
        for g in grids[1:]:
            if g.geometry != geometry:
                raise ShapeError(f"grid for {g.year} does not share the panel geometry")
        years = [g.year for g in grids]
        for a, b in zip(years, years[1:]):
            if b != a + 1:
                raise SequencingError(f"panel years must be consecutive, got {a} then {b}")
        self.geometry = geometry
        self.grids = tuple(grids)
        self.years = tuple(years)

    @classmethod
    def from_dir(cls, path, lazy: bool = True) -> "Panel":
        """Load every ``*.nlg`` file in a directory, ordered by header year."""
        files = sorted(Path(path).glob("*.nlg"))
        if not files:
            raise FileNotFoundError(f"no .nlg rasters in {path}")
        grids = sorted((load_raster(f, lazy=lazy) for f in files), key=lambda g: g.year)
        return cls(grids)

    def __len__(self):
        return len(self.grids)

    def __iter__(self):
        return iter(self.grids)

    def __getitem__(self, year: int) -> RasterGrid:
        try:
            return self.grids[self.years.index(year)]
        except ValueError:
            raise KeyError(year) from None

    @property
    def diff_years(self) -> tuple[int, ...]:
        return self.years[1:]

    def pairs(self) -> Iterator[tuple[RasterGrid, RasterGrid]]:
        return zip(self.grids, self.grids[1:])


def _pack_header(magic, geometry, year, dtype, nodata) -> bytes:
    return _HEADER.pack(
        magic,
        FORMAT_VERSION,
        geometry.width,
        geometry.height,
        geometry.lon_min,
        geometry.lon_max,
        geometry.lat_min,
        geometry.lat_max,
        year,
        dtype,
        nodata,
        b"\x00" * 6,
    )


def _read_header(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if raw[:4] != magic:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    if len(raw) < HEADER_SIZE:
        raise TruncationError(f"{path}: header is {len(raw)} bytes, expected {HEADER_SIZE}")
    _, version, w, h, lon0, lon1, lat0, lat1, year, dtype, nodata, _ = _HEADER.unpack(raw)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    try:
        geometry = GridGeometry(w, h, lon0, lon1, lat0, lat1)
    except ShapeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return geometry, year, dtype, nodata


def load_raster(path, *, lazy: bool = False, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> RasterGrid:
    """Read an NLG1 file.

    The payload is validated in bands either way; ``lazy=True`` leaves it on
    disk afterwards.
    """
    geometry, year, dtype, nodata = _read_header(path, NLG1_MAGIC)
    if dtype != DTYPE_U8:
        raise FormatError(f"{path}: dtype code {dtype} is not 0 (u8 DN)")
    if nodata <= DN_MAX:
        raise FormatError(f"{path}: nodata sentinel {nodata} collides with the DN range")
    payload = os.path.getsize(path) - HEADER_SIZE
    if payload != geometry.size:
        raise TruncationError(
            f"{path}: header promises {geometry.size} pixels, payload holds {payload} bytes"
        )
    grid = RasterGrid._on_disk(geometry, year, nodata, path, HEADER_SIZE)
    for _, band in grid.iter_rows(chunk_rows):
        _check_dn(band, nodata)
    if lazy:
        return grid
    arr = grid.values
    out = object.__new__(RasterGrid)
    out.geometry, out.year, out.nodata = geometry, year, nodata
    out._values, out._path, out._offset = arr, None, 0
    return out


def write_raster(grid: RasterGrid, path, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack_header(NLG1_MAGIC, grid.geometry, grid.year, DTYPE_U8, grid.nodata))
        for _, band in grid.iter_rows(chunk_rows):
            fh.write(np.ascontiguousarray(band, dtype=np.uint8).tobytes())


def write_float_grid(path, geometry: GridGeometry, year: int, values) -> None:
    """Dump a real-valued grid as NLD1 (float32, NaN = no value)."""
    arr = np.asarray(values, dtype="<f4").reshape(geometry.shape)
    with open(path, "wb") as fh:
        fh.write(_pack_header(NLD1_MAGIC, geometry, year, DTYPE_F32, 0))
        fh.write(arr.tobytes())


def load_float_grid(path) -> tuple[GridGeometry, int, np.ndarray]:
    geometry, year, dtype, _ = _read_header(path, NLD1_MAGIC)
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: dtype code {dtype} is not 1 (f32)")
    arr = np.fromfile(path, dtype="<f4", offset=HEADER_SIZE)
    if arr.size != geometry.size:
        raise TruncationError(f"{path}: expected {geometry.size} floats, found {arr.size}")
    return geometry, year, arr.reshape(geometry.shape)


_ASCII_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def import_ascii_grid(path, year: int) -> RasterGrid:
    """Read an Arc/Info ASCII grid of DN values.

    ``xllcenter``/``yllcenter`` are accepted in place of the corner keys.  The
    first data row is the northernmost one.  Values outside 0..63 are rejected
    rather than clamped; cells equal to ``NODATA_value`` become the sentinel.
    """
    with open(path) as fh:
        text = fh.read()
    tokens = text.split()
    header = {}
    pos = 0
    while pos + 1 < len(tokens) and tokens[pos][:1].isalpha():
        header[tokens[pos].lower()] = tokens[pos + 1]
        pos += 2
    if "xllcenter" in header and "xllcorner" not in header:
        header["xllcorner"] = header["xllcenter"]
        header["_center"] = "x"
    if "yllcenter" in header and "yllcorner" not in header:
        header["yllcorner"] = header["yllcenter"]
        header["_center"] = header.get("_center", "") + "y"
    missing = [k for k in _ASCII_KEYS if k not in header]
    if missing:
        raise FormatError(f"{path}: missing header keys {missing}")
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        cell = float(header["cellsize"])
        x0 = float(header["xllcorner"])
        y0 = float(header["yllcorner"])
        nodata_token = float(header["nodata_value"])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header value ({exc})") from None
    if ncols < 1 or nrows < 1 or cell <= 0:
        raise FormatError(f"{path}: non-positive dimensions or cell size")
    if "x" in header.get("_center", ""):
        x0 -= cell / 2
    if "y" in header.get("_center", ""):
        y0 -= cell / 2

    try:
        data = np.array(tokens[pos:], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell value ({exc})") from None
    if data.size != ncols * nrows:
        raise TruncationError(f"{path}: expected {ncols * nrows} cells, found {data.size}")

    is_nodata = data == nodata_token
    valid = data[~is_nodata]
    bad = (valid < 0) | (valid > DN_MAX) | (valid != np.floor(valid))
    if bad.any():
        raise RangeError(f"{path}: cell value {valid[bad][0]:g} is not a DN in 0..{DN_MAX}")
    out = np.where(is_nodata, NODATA, data).astype(np.uint8)
    geometry = GridGeometry(ncols, nrows, x0, x0 + ncols * cell, y0, y0 + nrows * cell)
    return RasterGrid(geometry, year, out.reshape(nrows, ncols))
