"""Chunked evaluation over a worker pool with a deterministic reduction.

Chunk boundaries depend only on the number of points, never on the number of
workers, so every element is computed by exactly the same vectorized call
whatever the pool size.  That is what makes reports byte-identical across
``--threads`` settings.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

CHUNK = 1024
_default_threads = 1


def set_default_threads(n: int) -> None:
    global _default_threads
    if n < 1:
        raise ValueError("threads must be >= 1")
    _default_threads = int(n)


def default_threads() -> int:
    return _default_threads


def chunked_eval(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray, threads: int | None = None) -> np.ndarray:
    """Apply ``fn`` to fixed-size slices of ``points`` and concatenate."""
    threads = threads or _default_threads
    n = len(points)
    bounds = [(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    if threads == 1 or len(bounds) == 1:
        parts = [fn(points[a:b]) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: fn(points[ab[0]:ab[1]]), bounds))
    return np.concatenate(parts) if parts else np.empty(0)


def ordered_map(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    """``[fn(x) for x in items]`` on a pool; output order follows input order."""
    threads = threads or _default_threads
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def min_reduce(values: np.ndarray) -> tuple[float, int]:
    """Minimum and the lowest index attaining it."""
    idx = int(np.argmin(values))
    return float(values[idx]), idx
