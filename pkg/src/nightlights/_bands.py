"""Row-band scheduling shared by the streaming passes.

Every large reduction in the package walks a grid in horizontal bands of
``chunk_rows`` rows.  Results are always collected in band order, so the
outcome of a pass depends on the band size but never on the thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, TypeVar

T = TypeVar("T")

DEFAULT_CHUNK_ROWS = 256


def iter_bands(height: int, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> Iterator[tuple[int, int]]:
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    for start in range(0, height, chunk_rows):
        yield start, min(start + chunk_rows, height)


def map_bands(
    fn: Callable[[int, int], T],
    height: int,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
    threads: int = 1,
) -> list[T]:
    """Apply ``fn(start, stop)`` to every band and return results in band order."""
    bands = list(iter_bands(height, chunk_rows))
    if threads <= 1 or len(bands) <= 1:
        return [fn(a, b) for a, b in bands]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # Executor.map preserves submission order.
        return list(pool.map(lambda ab: fn(*ab), bands))
