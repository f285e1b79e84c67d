"""Diverging colour maps of change grids.

Negative change ramps from black to blue, positive change from black to
red; anything beyond ``clamp`` reference deviations is painted cyan
(negative) or orange (positive).  No-value pixels stay black.  Output is
binary PPM (P6), byte-exact, or PNG through Pillow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyScopeError, FormatError
from .pipeline import CumulativeChangeGrid

BLACK = (0, 0, 0)
CYAN = (0, 255, 255)
ORANGE = (255, 165, 0)


@dataclass(frozen=True)
class Palette:
    clamp: float = 3.0
    negative: tuple[int, int, int] = (0, 0, 255)
    positive: tuple[int, int, int] = (255, 0, 0)
    extreme_negative: tuple[int, int, int] = CYAN
    extreme_positive: tuple[int, int, int] = ORANGE
    background: tuple[int, int, int] = BLACK

    def __post_init__(self):
        if not self.clamp > 0:
            raise ValueError("palette clamp must be positive")


DEFAULT_PALETTE = Palette()


def _intensity(ratio):
    # round half up; ratio is within [0, 1]
    return np.floor(255.0 * ratio + 0.5).astype(np.uint8)


def color_of(value: float, sigma_ref: float, palette: Palette = DEFAULT_PALETTE) -> tuple[int, int, int]:
    if not sigma_ref > 0:
        raise ValueError(f"reference deviation must be positive, got {sigma_ref}")
    if value is None or math.isnan(value) or value == 0:
        return palette.background
    limit = palette.clamp * sigma_ref
    if abs(value) > limit:
        return palette.extreme_positive if value > 0 else palette.extreme_negative
    level = int(_intensity(abs(value) / limit))
    ramp = palette.positive if value > 0 else palette.negative
    return tuple(level * c // 255 for c in ramp)


def colorize(values, sigma_ref: float, palette: Palette = DEFAULT_PALETTE) -> np.ndarray:
    """Vectorised :func:`color_of` returning ``values.shape + (3,)`` uint8.

    ``sigma_ref == 0`` is accepted here: zeros stay black and every other
    value counts as an outlier.
    """
    v = np.asarray(values, dtype=np.float64)
    if not sigma_ref >= 0:
        raise ValueError(f"reference deviation must be non-negative, got {sigma_ref}")
    out = np.zeros(v.shape + (3,), dtype=np.uint8)
    out[...] = palette.background
    valued = np.isfinite(v) & (v != 0)
    limit = palette.clamp * sigma_ref
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(valued & (np.abs(v) <= limit), np.abs(v) / limit if limit > 0 else 0.0, 0.0)
    level = _intensity(ratio).astype(np.uint16)
    for sign, ramp, extreme in ((1, palette.positive, palette.extreme_positive),
                                (-1, palette.negative, palette.extreme_negative)):
        side = valued & (np.sign(v) == sign)
        inner = side & (np.abs(v) <= limit)
        outer = side & ~inner
        for ch in range(3):
            out[..., ch][inner] = (level[inner] * ramp[ch] // 255).astype(np.uint8)
            out[..., ch][outer] = extreme[ch]
    return out


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, 3) or self.pixels.dtype != np.uint8:
            raise ValueError("pixel buffer must be (height, width, 3) uint8")

    @classmethod
    def from_array(cls, rgb) -> "ImageBuffer":
        rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
        return cls(rgb.shape[1], rgb.shape[0], rgb)

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def block_mean(values: np.ndarray, block: int) -> np.ndarray:
    """Mean over valued (finite) pixels in ``block`` x ``block`` tiles; NaN if none."""
    if block <= 1:
        return values
    h, w = values.shape
    hb, wb = -(-h // block), -(-w // block)
    padded = np.full((hb * block, wb * block), np.nan)
    padded[:h, :w] = values
    tiles = padded.reshape(hb, block, wb, block)
    ok = np.isfinite(tiles)
    s = np.where(ok, tiles, 0.0).sum(axis=(1, 3))
    n = ok.sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, s / np.maximum(n, 1), np.nan)


def render_change_map(
    grid: CumulativeChangeGrid,
    palette: Palette = DEFAULT_PALETTE,
    max_width: int | None = 4320,
    window: tuple[int, int, int, int] | None = None,
) -> ImageBuffer:
    """Colour a change grid against the population std of its valued pixels.

    ``window`` crops to ``(row0, row1, col0, col1)`` before rendering; the
    reference deviation is still taken over the whole grid.  Grids wider
    than ``max_width`` are reduced by block means first.
    """
    valued = grid.valued_values()
    if valued.size == 0:
        raise EmptyScopeError("nothing to render: grid has no valued pixel")
    sigma_ref = float(valued.std())
    values = grid.values
    if window is not None:
        r0, r1, c0, c1 = window
        values = values[r0:r1, c0:c1]
    block = 1
    if max_width and values.shape[1] > max_width:
        block = -(-values.shape[1] // max_width)
    rgb = colorize(block_mean(values, block), sigma_ref, palette)
    return ImageBuffer.from_array(rgb)


def ppm_bytes(img: ImageBuffer) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + img.tobytes()


def write_image(img: ImageBuffer, path, format: str = "ppm") -> None:
    if format == "ppm":
        with open(path, "wb") as fh:
            fh.write(ppm_bytes(img))
    elif format == "png":
        from PIL import Image

        Image.fromarray(img.pixels).save(path, format="PNG", optimize=False)
    else:
        raise ValueError(f"unknown image format {format!r}")


def read_ppm(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise FormatError(f"{path}: not a P6 file written by this package")
    w, h = (int(x) for x in parts[1].split())
    raw = np.frombuffer(parts[3], dtype=np.uint8)
    if raw.size != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} payload bytes, found {raw.size}")
    return ImageBuffer(w, h, raw.reshape(h, w, 3).copy())
