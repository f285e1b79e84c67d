"""Region masks: which pixels belong to which country or state.

A mask pairs an ``RMSK`` id grid (one little-endian u16 per pixel, 0 for
unassigned) with a CSV table ``id,name,kind``.  Every statistic downstream
is computed for a :class:`Scope`, either the whole world or one region.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConsistencyError, FormatError, RegionLookupError, ShapeError, TruncationError
from .grid import FORMAT_VERSION, GridGeometry

RMSK_MAGIC = b"RMSK"
_HEADER = struct.Struct("<4sHIIdddd")
HEADER_SIZE = _HEADER.size  # 46

KINDS = ("country", "state")


@dataclass(frozen=True, order=True)
class Region:
    id: int
    name: str
    kind: str = "country"


@dataclass(frozen=True)
class Scope:
    """Analysis scope.  ``region_id is None`` means the whole world."""

    region_id: int | None = None

    @property
    def is_world(self) -> bool:
        return self.region_id is None

    def __str__(self):
        return "World" if self.is_world else f"Region({self.region_id})"


WORLD = Scope()


def region_scope(region_id: int) -> Scope:
    if region_id <= 0:
        raise RegionLookupError(region_id)
    return Scope(int(region_id))


class RegionMask:
    """Pixel to region-id map plus the region table."""

    def __init__(self, geometry: GridGeometry, ids, table: Sequence[Region]):
        arr = np.asarray(ids)
        if arr.size != geometry.size:
            raise ShapeError(f"{arr.size} ids for a {geometry.width}x{geometry.height} grid")
        if arr.dtype.kind not in "iu" or (arr.size and (arr.min() < 0 or arr.max() > 0xFFFF)):
            raise ConsistencyError("region ids must be integers in 0..65535")
        arr = np.array(arr, dtype=np.uint16).reshape(geometry.shape)
        arr.flags.writeable = False

        by_id: dict[int, Region] = {}
        for r in table:
            if r.id == 0:
                raise ConsistencyError("region id 0 is reserved for unassigned pixels")
            if r.id in by_id:
                raise ConsistencyError(f"duplicate region id {r.id} in table")
            if r.kind not in KINDS:
                raise ConsistencyError(f"region {r.id}: kind {r.kind!r} not in {KINDS}")
            by_id[r.id] = r
        present = np.unique(arr)
        unknown = [int(i) for i in present if i != 0 and int(i) not in by_id]
        if unknown:
            raise ConsistencyError(f"ids {unknown} appear in the grid but not in the table")

        self.geometry = geometry
        self.ids = arr
        self.table = tuple(sorted(by_id.values()))
        self._by_id = by_id

    def region(self, region_id: int) -> Region:
        try:
            return self._by_id[region_id]
        except KeyError:
            raise RegionLookupError(region_id) from None

    def find(self, name: str) -> Region:
        for r in self.table:
            if r.name == name:
                return r
        raise RegionLookupError(name)

    def check(self, scope: Scope) -> None:
        if not scope.is_world:
            self.region(scope.region_id)

    def scope_name(self, scope: Scope) -> str:
        return "World" if scope.is_world else self.region(scope.region_id).name

    def scopes(self) -> list[Scope]:
        return [Scope(r.id) for r in self.table]

    def bbox(self, scope: Scope) -> tuple[int, int, int, int]:
        """``(row0, row1, col0, col1)`` half-open bounds of the scope's pixels."""
        if scope.is_world:
            return 0, self.geometry.height, 0, self.geometry.width
        hit = self.ids == self.region(scope.region_id).id
        rows = np.flatnonzero(hit.any(axis=1))
        cols = np.flatnonzero(hit.any(axis=0))
        if rows.size == 0:
            return 0, 0, 0, 0
        return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def scope_indices(mask: RegionMask | None, scope: Scope, geometry: GridGeometry | None = None) -> np.ndarray:
    """Flat row-major indices of the scope's pixels as an int64 array."""
    if scope.is_world:
        size = geometry.size if mask is None else mask.geometry.size
        return np.arange(size, dtype=np.int64)
    if mask is None:
        raise RegionLookupError(scope.region_id)
    mask.check(scope)
    return np.flatnonzero(mask.ids.ravel() == scope.region_id)


def pixels_in(mask: RegionMask, scope: Scope) -> Iterator[int]:
    """Iterate the scope's pixel indices in row-major order."""
    if scope.is_world:
        return iter(range(mask.geometry.size))
    return (int(i) for i in scope_indices(mask, scope))


def in_scope(mask: RegionMask | None, scope: Scope, index: np.ndarray) -> np.ndarray:
    """Boolean selector over flat pixel indices ``index``."""
    if scope.is_world:
        return np.ones(index.shape, dtype=bool)
    if mask is None:
        raise RegionLookupError(scope.region_id)
    mask.check(scope)
    return mask.ids.ravel()[index] == scope.region_id


def read_table(path) -> list[Region]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "name", "kind"]:
            raise FormatError(f"{path}: header must be 'id,name,kind'")
        rows = []
        for line in reader:
            try:
                rid = int(line["id"])
            except (TypeError, ValueError):
                raise FormatError(f"{path}: bad id {line['id']!r}") from None
            rows.append(Region(rid, line["name"], line["kind"].strip()))
    return rows


def write_table(path, table: Sequence[Region]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "name", "kind"])
        for r in sorted(table):
            w.writerow([r.id, r.name, r.kind])


def load_mask(raster_path, table_path) -> RegionMask:
    with open(raster_path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if raw[:4] != RMSK_MAGIC:
        raise FormatError(f"{raster_path}: bad magic {raw[:4]!r}, expected {RMSK_MAGIC!r}")
    if len(raw) < HEADER_SIZE:
        raise TruncationError(f"{raster_path}: short header")
    _, version, w, h, lon0, lon1, lat0, lat1 = _HEADER.unpack(raw)
    if version != FORMAT_VERSION:
        raise FormatError(f"{raster_path}: unsupported format version {version}")
    geometry = GridGeometry(w, h, lon0, lon1, lat0, lat1)
    ids = np.fromfile(raster_path, dtype="<u2", offset=HEADER_SIZE)
    if ids.size != geometry.size:
        raise TruncationError(f"{raster_path}: expected {geometry.size} ids, found {ids.size}")
    return RegionMask(geometry, ids.reshape(geometry.shape), read_table(table_path))


def write_mask(mask: RegionMask, raster_path, table_path=None) -> None:
    g = mask.geometry
    with open(raster_path, "wb") as fh:
        fh.write(_HEADER.pack(RMSK_MAGIC, FORMAT_VERSION, g.width, g.height,
                              g.lon_min, g.lon_max, g.lat_min, g.lat_max))
        fh.write(np.ascontiguousarray(mask.ids, dtype="<u2").tobytes())
    if table_path is not None:
        write_table(table_path, mask.table)
